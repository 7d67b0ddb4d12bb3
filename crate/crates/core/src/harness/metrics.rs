//! Summary statistics over clusterings and distance matrices.

use crate::divergence::DistanceMatrix;

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same points.
/// Returns 1 when both partitions are trivial and identical.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as u64;
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let index: f64 = table.iter().map(|&c| choose2(c)).sum();
    let rows: f64 = (0..ka)
        .map(|i| choose2(table[i * kb..(i + 1) * kb].iter().sum()))
        .sum();
    let cols: f64 = (0..kb)
        .map(|j| choose2((0..ka).map(|i| table[i * kb + j]).sum()))
        .sum();
    let total = choose2(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = rows * cols / total;
    let max = (rows + cols) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Mean distance over off-diagonal pairs in the same group and in different groups.
pub fn intra_inter_means(d: &DistanceMatrix, groups: &[usize]) -> (f64, f64) {
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..d.n() {
        for j in i + 1..d.n() {
            if groups[i] == groups[j] {
                intra += d.get(i, j);
                n_intra += 1;
            } else {
                inter += d.get(i, j);
                n_inter += 1;
            }
        }
    }
    (intra / n_intra.max(1) as f64, inter / n_inter.max(1) as f64)
}

/// Fraction of clusters whose dominant group covers at least `threshold` of members.
pub fn pure_cluster_fraction(labels: &[usize], groups: &[usize], threshold: f64) -> f64 {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    if k == 0 {
        return 0.0;
    }
    let g = groups.iter().max().map_or(0, |m| m + 1);
    let mut pure = 0;
    for c in 0..k {
        let mut counts = vec![0usize; g];
        let mut size = 0;
        for (&l, &grp) in labels.iter().zip(groups) {
            if l == c {
                counts[grp] += 1;
                size += 1;
            }
        }
        if size > 0 && *counts.iter().max().unwrap() as f64 / size as f64 >= threshold {
            pure += 1;
        }
    }
    pure as f64 / k as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ari_known_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        // sklearn: adjusted_rand_score([0,0,1,1],[0,0,1,2]) = 0.5714285714285714
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 2]);
        assert!((v - 0.5714285714285714).abs() < 1e-12);
        // sklearn: adjusted_rand_score([0,0,0,1,1,1],[0,1,2,0,1,2]) = -0.36363636363636365
        let w = adjusted_rand_index(&[0, 0, 0, 1, 1, 1], &[0, 1, 2, 0, 1, 2]);
        assert!((w + 0.36363636363636365).abs() < 1e-12);
    }

    #[test]
    fn intra_inter() {
        let d = DistanceMatrix::from_rows(
            vec![0, 1, 2],
            vec![vec![0.0, 1.0, 4.0], vec![1.0, 0.0, 6.0], vec![4.0, 6.0, 0.0]],
        )
        .unwrap();
        assert_eq!(intra_inter_means(&d, &[0, 0, 1]), (1.0, 5.0));
    }

    #[test]
    fn purity_and_median() {
        assert_eq!(pure_cluster_fraction(&[0, 0, 1, 1], &[0, 0, 0, 1], 0.6), 0.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
