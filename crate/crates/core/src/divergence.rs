//! Policy divergence from observed trajectories.
//!
//! Each policy is summarized by a state-marginalized occupancy estimate: at a
//! state `s`, `rho_i(s) = pi_i(. | s) * q_i(s)` where `q_i` is a Gaussian KDE
//! over the states of the policy's post-update trajectory. Comparison states
//! are drawn from a pooled KDE over all trajectories, and the distance
//! between two policies is the density-weighted sum of per-state
//! Jensen-Shannon divergences.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{Vec2, NUM_ACTIONS};
use crate::error::{CamlError, Result};
use crate::policy::{forward, PolicyParams, Trajectory};
use crate::rng::Rng;

pub const MIN_BANDWIDTH: f64 = 1e-3;
pub const DENSITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// `h = n^(-1/6) * sigma`, sigma the pooled per-axis sample std.
    Scott,
    Fixed(f64),
}

/// Isotropic Gaussian kernel density estimate over 2D states.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    points: Vec<Vec2>,
    bandwidth: f64,
}

impl Kde {
    pub fn new(points: Vec<Vec2>, bandwidth: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(CamlError::EmptySupport);
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(CamlError::Domain(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { points, bandwidth })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// `(1/n) sum_p N(s; p, h^2 I)`.
    pub fn density(&self, s: Vec2) -> f64 {
        let h2 = self.bandwidth * self.bandwidth;
        let norm = 1.0 / (2.0 * PI * h2);
        let sum: f64 = self
            .points
            .iter()
            .map(|&p| (-(s - p).norm_sq() / (2.0 * h2)).exp())
            .sum();
        norm * sum / self.points.len() as f64
    }

    /// Draw `m` states: a uniformly chosen support point plus `N(0, h^2 I)` noise.
    pub fn sample(&self, m: usize, rng: &mut Rng) -> Vec<Vec2> {
        (0..m)
            .map(|_| {
                let p = self.points[rng.random_range(0..self.points.len())];
                let dx: f64 = rng.sample(StandardNormal);
                let dy: f64 = rng.sample(StandardNormal);
                Vec2::new(p.x + self.bandwidth * dx, p.y + self.bandwidth * dy)
            })
            .collect()
    }
}

pub fn scott_bandwidth(states: &[Vec2]) -> f64 {
    let n = states.len();
    if n < 2 {
        return MIN_BANDWIDTH;
    }
    let nf = n as f64;
    let mx = states.iter().map(|s| s.x).sum::<f64>() / nf;
    let my = states.iter().map(|s| s.y).sum::<f64>() / nf;
    let vx = states.iter().map(|s| (s.x - mx).powi(2)).sum::<f64>() / (nf - 1.0);
    let vy = states.iter().map(|s| (s.y - my).powi(2)).sum::<f64>() / (nf - 1.0);
    let sigma = ((vx + vy) / 2.0).sqrt();
    (nf.powf(-1.0 / 6.0) * sigma).max(MIN_BANDWIDTH)
}

pub fn fit_kde(states: &[Vec2], rule: BandwidthRule) -> Result<Kde> {
    if states.is_empty() {
        return Err(CamlError::EmptySupport);
    }
    let h = match rule {
        BandwidthRule::Scott => scott_bandwidth(states),
        BandwidthRule::Fixed(h) => h,
    };
    Kde::new(states.to_vec(), h)
}

fn kl(p: &[f64; NUM_ACTIONS], m: &[f64; NUM_ACTIONS]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &mi)| pi * (pi / mi).ln())
        .sum()
}

fn normalized(v: &[f64; NUM_ACTIONS]) -> [f64; NUM_ACTIONS] {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.map(|x| x / s)
    } else {
        *v
    }
}

/// `KL(p || m) + KL(q || m)`, `m = (p + q) / 2`, without the usual halving,
/// so disjoint normalized arguments give `2 ln 2`.
pub fn js_divergence(p: &[f64; NUM_ACTIONS], q: &[f64; NUM_ACTIONS], normalize: bool) -> Result<f64> {
    if p.iter().chain(q).any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(CamlError::Domain(format!(
            "divergence arguments must be finite and nonnegative: {p:?}, {q:?}"
        )));
    }
    let (p, q) = if normalize {
        (normalized(p), normalized(q))
    } else {
        (*p, *q)
    };
    let mut m = [0.0; NUM_ACTIONS];
    for i in 0..NUM_ACTIONS {
        m[i] = (p[i] + q[i]) / 2.0;
    }
    Ok((kl(&p, &m) + kl(&q, &m)).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleWeighting {
    /// Sum over sampled states of `js * q_pooled(s)`.
    Density,
    /// Plain Monte-Carlo mean of `js` over sampled states.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DivergenceConfig {
    pub m_samples: usize,
    pub normalize_occupancy: bool,
    pub weighting: SampleWeighting,
    pub bandwidth: BandwidthRule,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self {
            m_samples: 100,
            normalize_occupancy: true,
            weighting: SampleWeighting::Density,
            bandwidth: BandwidthRule::Scott,
        }
    }
}

/// Symmetric pairwise distances with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    ids: Vec<usize>,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn zeros(ids: Vec<usize>) -> Self {
        let n = ids.len();
        Self {
            ids,
            entries: vec![0.0; n * n],
        }
    }

    /// Build from a full row-major matrix, checking symmetry, the diagonal and signs.
    pub fn from_rows(ids: Vec<usize>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = ids.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(CamlError::InvalidMatrix(format!("expected {n}x{n} rows")));
        }
        let m = Self {
            ids,
            entries: rows.into_iter().flatten().collect(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        for i in 0..n {
            if self.get(i, i) != 0.0 {
                return Err(CamlError::InvalidMatrix(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let d = self.get(i, j);
                if !(d >= 0.0) || !d.is_finite() {
                    return Err(CamlError::InvalidMatrix(format!("entry ({i}, {j}) = {d}")));
                }
                if d != self.get(j, i) {
                    return Err(CamlError::InvalidMatrix(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n() + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set_pair(&mut self, i: usize, j: usize, d: f64) {
        let n = self.n();
        self.entries[i * n + j] = d;
        self.entries[j * n + i] = d;
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().cloned().fold(0.0, f64::max)
    }

    /// Write as CSV: header `id,<id>...`, then one row per id; rows and
    /// columns ordered by ascending id.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by_key(|&i| (self.ids[i], i));
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string()];
        header.extend(order.iter().map(|&i| self.ids[i].to_string()));
        w.write_record(&header)?;
        for &i in &order {
            let mut row = vec![self.ids[i].to_string()];
            row.extend(order.iter().map(|&j| self.get(i, j).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Occupancy vectors of every policy at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyEstimate {
    pub state: Vec2,
    pub per_policy_measure: Vec<[f64; NUM_ACTIONS]>,
}

pub fn occupancy_at(policies: &[PolicyParams], kdes: &[Kde], s: Vec2) -> OccupancyEstimate {
    let per_policy_measure = policies
        .iter()
        .zip(kdes)
        .map(|(p, k)| {
            let q = k.density(s).max(DENSITY_FLOOR);
            forward(p, s).map(|pa| pa * q)
        })
        .collect();
    OccupancyEstimate {
        state: s,
        per_policy_measure,
    }
}

fn check_inputs(policies: &[PolicyParams], trajectories: &[Trajectory]) -> Result<()> {
    if policies.len() != trajectories.len() {
        return Err(CamlError::Input(format!(
            "{} policies but {} trajectories",
            policies.len(),
            trajectories.len()
        )));
    }
    if policies.is_empty() {
        return Err(CamlError::Input("no policies to compare".into()));
    }
    Ok(())
}

fn per_policy_kdes(trajectories: &[Trajectory], rule: BandwidthRule) -> Result<Vec<Kde>> {
    trajectories
        .iter()
        .map(|t| fit_kde(&t.states, rule))
        .collect()
}

pub fn pooled_kde(trajectories: &[Trajectory], rule: BandwidthRule) -> Result<Kde> {
    let all: Vec<Vec2> = trajectories
        .iter()
        .flat_map(|t| t.states.iter().copied())
        .collect();
    fit_kde(&all, rule)
}

/// Pairwise distances evaluated on a fixed set of comparison states.
pub fn pairwise_divergence_at(
    policies: &[PolicyParams],
    trajectories: &[Trajectory],
    samples: &[Vec2],
    cfg: &DivergenceConfig,
) -> Result<DistanceMatrix> {
    check_inputs(policies, trajectories)?;
    let kdes = per_policy_kdes(trajectories, cfg.bandwidth)?;
    let pooled = pooled_kde(trajectories, cfg.bandwidth)?;
    let n = policies.len();
    let ids = trajectories.iter().map(|t| t.entity_id).collect();
    let mut dm = DistanceMatrix::zeros(ids);
    let mut acc = vec![0.0; n * n];
    for &s in samples {
        let occ = occupancy_at(policies, &kdes, s);
        let weight = match cfg.weighting {
            SampleWeighting::Density => pooled.density(s),
            SampleWeighting::Uniform => 1.0 / samples.len() as f64,
        };
        for i in 0..n {
            for j in i + 1..n {
                let js = js_divergence(
                    &occ.per_policy_measure[i],
                    &occ.per_policy_measure[j],
                    cfg.normalize_occupancy,
                )?;
                acc[i * n + j] += js * weight;
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            dm.set_pair(i, j, acc[i * n + j]);
        }
    }
    dm.validate()?;
    Ok(dm)
}

/// Fit per-policy and pooled KDEs, draw `cfg.m_samples` states from the
/// pooled KDE and accumulate pairwise distances over them.
pub fn pairwise_divergence(
    policies: &[PolicyParams],
    trajectories: &[Trajectory],
    cfg: &DivergenceConfig,
    rng: &mut Rng,
) -> Result<DistanceMatrix> {
    check_inputs(policies, trajectories)?;
    if cfg.m_samples == 0 {
        return Err(CamlError::Input("m_samples must be at least 1".into()));
    }
    let pooled = pooled_kde(trajectories, cfg.bandwidth)?;
    let samples = pooled.sample(cfg.m_samples, rng);
    pairwise_divergence_at(policies, trajectories, &samples, cfg)
}
