//! Slow, direct reference implementations used as test oracles. Nothing here
//! calls into the library's numerical code.

#![allow(dead_code)]

use caml::env::Vec2;

/// Logits of a tanh MLP stored as, per layer, a row-major `[out][in]`
/// weight block followed by the bias vector.
pub fn naive_logits(layout: &[usize], data: &[f64], s: Vec2) -> Vec<f64> {
    let mut x = vec![s.x, s.y];
    let mut off = 0;
    for l in 0..layout.len() - 1 {
        let (n_in, n_out) = (layout[l], layout[l + 1]);
        let mut z = vec![0.0; n_out];
        for o in 0..n_out {
            let mut acc = 0.0;
            for i in 0..n_in {
                acc += data[off + o * n_in + i] * x[i];
            }
            z[o] = acc + data[off + n_in * n_out + o];
        }
        off += n_in * n_out + n_out;
        if l + 2 < layout.len() {
            for v in z.iter_mut() {
                *v = v.tanh();
            }
        }
        x = z;
    }
    x
}

pub fn naive_probs(layout: &[usize], data: &[f64], s: Vec2) -> Vec<f64> {
    let z = naive_logits(layout, data, s);
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.iter().map(|v| v / sum).collect()
}

pub fn naive_log_prob(layout: &[usize], data: &[f64], s: Vec2, a: usize) -> f64 {
    let z = naive_logits(layout, data, s);
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z[a] - lse
}

/// Reward-to-go minus the batch mean of reward-to-go at the same timestep.
pub fn naive_advantages(rewards: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    let g: Vec<Vec<f64>> = rewards
        .iter()
        .map(|r| {
            (0..r.len())
                .map(|t| (t..r.len()).map(|u| gamma.powi((u - t) as i32) * r[u]).sum())
                .collect()
        })
        .collect();
    let max_len = g.iter().map(Vec::len).max().unwrap_or(0);
    let mut mean = vec![0.0; max_len];
    for t in 0..max_len {
        let alive: Vec<f64> = g.iter().filter(|x| x.len() > t).map(|x| x[t]).collect();
        mean[t] = alive.iter().sum::<f64>() / alive.len() as f64;
    }
    g.iter()
        .map(|x| x.iter().enumerate().map(|(t, v)| v - mean[t]).collect())
        .collect()
}

/// `(1/K) sum_k sum_t log pi(a_t | s_t) * adv_t`.
pub fn naive_surrogate(
    layout: &[usize],
    data: &[f64],
    states: &[Vec<Vec2>],
    actions: &[Vec<usize>],
    adv: &[Vec<f64>],
) -> f64 {
    let mut total = 0.0;
    for k in 0..states.len() {
        for t in 0..states[k].len() {
            total += naive_log_prob(layout, data, states[k][t], actions[k][t]) * adv[k][t];
        }
    }
    total / states.len() as f64
}

pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut y = x.to_vec();
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let up = f(&y);
        y[i] = x[i] - h;
        let down = f(&y);
        y[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    out
}

pub fn naive_scott(points: &[Vec2]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 1e-3;
    }
    let mut var = 0.0;
    for axis in 0..2 {
        let v: Vec<f64> = points.iter().map(|p| if axis == 0 { p.x } else { p.y }).collect();
        let mean = v.iter().sum::<f64>() / n;
        var += v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    }
    (n.powf(-1.0 / 6.0) * (var / 2.0).sqrt()).max(1e-3)
}

pub fn naive_density(points: &[Vec2], h: f64, s: Vec2) -> f64 {
    let mut acc = 0.0;
    for p in points {
        let dx = s.x - p.x;
        let dy = s.y - p.y;
        acc += (-(dx * dx + dy * dy) / (2.0 * h * h)).exp() / (2.0 * std::f64::consts::PI * h * h);
    }
    acc / points.len() as f64
}

/// Unhalved Jensen-Shannon: `sum_i p ln(2p/(p+q)) + q ln(2q/(p+q))`.
pub fn naive_js(p: &[f64], q: &[f64], normalize: bool) -> f64 {
    let (sp, sq): (f64, f64) = if normalize { (p.iter().sum(), q.iter().sum()) } else { (1.0, 1.0) };
    let mut d = 0.0;
    for i in 0..p.len() {
        let (a, b) = (p[i] / sp, q[i] / sq);
        if a > 0.0 {
            d += a * (2.0 * a / (a + b)).ln();
        }
        if b > 0.0 {
            d += b * (2.0 * b / (a + b)).ln();
        }
    }
    d.max(0.0)
}

/// Pairwise distances accumulated directly over every (sample, i, j).
pub fn naive_divergence(
    layout: &[usize],
    params: &[Vec<f64>],
    states: &[Vec<Vec2>],
    samples: &[Vec2],
    normalize: bool,
    density_weighting: bool,
) -> Vec<Vec<f64>> {
    let n = params.len();
    let pooled: Vec<Vec2> = states.iter().flatten().copied().collect();
    let h_pool = naive_scott(&pooled);
    let h: Vec<f64> = states.iter().map(|s| naive_scott(s)).collect();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut acc = 0.0;
            for &s in samples {
                let qi = naive_density(&states[i], h[i], s).max(1e-300);
                let qj = naive_density(&states[j], h[j], s).max(1e-300);
                let pi: Vec<f64> = naive_probs(layout, &params[i], s).iter().map(|v| v * qi).collect();
                let pj: Vec<f64> = naive_probs(layout, &params[j], s).iter().map(|v| v * qj).collect();
                let w = if density_weighting {
                    naive_density(&pooled, h_pool, s)
                } else {
                    1.0 / samples.len() as f64
                };
                acc += naive_js(&pi, &pj, normalize) * w;
            }
            d[i][j] = acc;
        }
    }
    d
}

/// Every `k`-subset of `0..n`, in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Optimal k-medoids cost by brute force over all medoid sets.
pub fn exhaustive_kmedoids(d: &[Vec<f64>], k: usize) -> (f64, Vec<usize>) {
    let n = d.len();
    let mut best = (f64::INFINITY, Vec::new());
    for set in combinations(n, k) {
        let cost: f64 = (0..n)
            .map(|i| set.iter().map(|&m| d[i][m]).fold(f64::INFINITY, f64::min))
            .sum();
        if cost < best.0 {
            best = (cost, set);
        }
    }
    best
}
