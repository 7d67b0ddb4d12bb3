//! K-medoids (PAM) over a precomputed distance matrix.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::divergence::DistanceMatrix;
use crate::error::{CamlError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedoidAssignment {
    /// Point indices of the medoids, ascending.
    pub medoid_indices: Vec<usize>,
    /// For every point, the position in `medoid_indices` of its medoid.
    pub labels: Vec<usize>,
    pub cost: f64,
}

impl MedoidAssignment {
    pub fn k(&self) -> usize {
        self.medoid_indices.len()
    }

    pub fn is_medoid(&self, i: usize) -> bool {
        self.medoid_indices.binary_search(&i).is_ok()
    }

    /// CSV rows `(index, label, is_medoid)`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "label", "is_medoid"])?;
        for (i, l) in self.labels.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string(), (self.is_medoid(i) as u8).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Nearest-medoid labels. A medoid always labels itself; other ties go to
/// the lowest medoid index.
pub fn assign(d: &DistanceMatrix, medoids: &[usize]) -> (Vec<usize>, f64) {
    let mut labels = Vec::with_capacity(d.n());
    let mut cost = 0.0;
    for i in 0..d.n() {
        if let Some(pos) = medoids.iter().position(|&m| m == i) {
            labels.push(pos);
            continue;
        }
        let (pos, dist) = medoids
            .iter()
            .enumerate()
            .map(|(pos, &m)| (pos, d.get(i, m)))
            .fold((usize::MAX, f64::INFINITY), |best, cur| {
                if cur.1 < best.1 {
                    cur
                } else {
                    best
                }
            });
        labels.push(pos);
        cost += dist;
    }
    (labels, cost)
}

/// Total distance of every point to its nearest medoid.
pub fn total_cost(d: &DistanceMatrix, medoids: &[usize]) -> f64 {
    (0..d.n())
        .map(|i| {
            medoids
                .iter()
                .map(|&m| d.get(i, m))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Greedy BUILD: repeatedly add the point that lowers total cost the most.
fn build(d: &DistanceMatrix, k: usize, eps: f64) -> Vec<usize> {
    let n = d.n();
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut nearest = vec![f64::INFINITY; n];
    for _ in 0..k {
        let mut best = (usize::MAX, f64::INFINITY);
        for c in (0..n).filter(|c| !medoids.contains(c)) {
            let cost: f64 = (0..n).map(|i| nearest[i].min(d.get(i, c))).sum();
            if cost < best.1 - eps {
                best = (c, cost);
            }
        }
        medoids.push(best.0);
        for (i, near) in nearest.iter_mut().enumerate() {
            *near = near.min(d.get(i, best.0));
        }
    }
    medoids
}

/// PAM: greedy BUILD followed by best-improvement SWAP until no single
/// medoid/non-medoid exchange lowers the cost. Ties are broken by lowest
/// index throughout, so the result does not depend on `seed`; the seed is
/// kept so callers can record it alongside other stochastic stages.
pub fn k_medoids(d: &DistanceMatrix, k: usize, _seed: u64) -> Result<MedoidAssignment> {
    let n = d.n();
    if k == 0 || k > n {
        return Err(CamlError::InvalidK { k, n });
    }
    d.validate()?;

    // Costs within `eps` count as ties; summation order alone must not
    // decide between equal-cost candidates.
    let eps = 1e-12 * (1.0 + d.max() * n as f64);
    let mut medoids = build(d, k, eps);
    let mut cost = total_cost(d, &medoids);
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for slot in 0..k {
            for cand in (0..n).filter(|c| !medoids.contains(c)) {
                let mut trial = medoids.clone();
                trial[slot] = cand;
                let c = total_cost(d, &trial);
                if c < cost - eps && best.is_none_or(|b| c < b.2 - eps) {
                    best = Some((slot, cand, c));
                }
            }
        }
        match best {
            Some((slot, cand, c)) => {
                medoids[slot] = cand;
                cost = c;
            }
            None => break,
        }
    }

    medoids.sort_unstable();
    let (labels, cost) = assign(d, &medoids);
    Ok(MedoidAssignment {
        medoid_indices: medoids,
        labels,
        cost,
    })
}
