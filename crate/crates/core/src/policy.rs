//! Feed-forward softmax policy over the four actions and REINFORCE training.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{self, ActionIndex, EntityType, EnvConfig, Vec2, NUM_ACTIONS};
use crate::error::{CamlError, Result};
use crate::rng::{rng_from, Rng};

pub const DEFAULT_LAYOUT: [usize; 4] = [2, 32, 32, NUM_ACTIONS];

/// Weights of a tanh MLP stored flat, layer by layer. Each layer stores its
/// `out x in` weight matrix row-major followed by its `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    layout: Vec<usize>,
    data: Vec<f64>,
}

fn check_layout(layout: &[usize]) -> Result<()> {
    if layout.len() < 2
        || layout[0] != 2
        || *layout.last().unwrap() != NUM_ACTIONS
        || layout.contains(&0)
    {
        return Err(CamlError::InvalidLayout(layout.to_vec()));
    }
    Ok(())
}

fn param_count(layout: &[usize]) -> usize {
    layout.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl PolicyParams {
    /// All-zero parameters: the policy is uniform everywhere.
    pub fn zeros(layout: &[usize]) -> Result<Self> {
        check_layout(layout)?;
        Ok(Self {
            layout: layout.to_vec(),
            data: vec![0.0; param_count(layout)],
        })
    }

    pub fn from_parts(layout: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_layout(&layout)?;
        if data.len() != param_count(&layout) {
            return Err(CamlError::Input(format!(
                "layout {layout:?} needs {} parameters, got {}",
                param_count(&layout),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CamlError::Domain("non-finite policy parameter".into()));
        }
        Ok(Self { layout, data })
    }

    pub fn layout(&self) -> &[usize] {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Offsets of (weights, biases) for layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = param_count(&self.layout[..=l]);
        let (n_in, n_out) = (self.layout[l], self.layout[l + 1]);
        (start, start + n_in * n_out)
    }

    fn num_layers(&self) -> usize {
        self.layout.len() - 1
    }

    /// Mutable view of the weight matrix and bias of layer `l`.
    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (w, b) = self.layer_offsets(l);
        let n_out = self.layout[l + 1];
        let (head, tail) = self.data.split_at_mut(b);
        (&mut head[w..], &mut tail[..n_out])
    }

    /// `self + scale * direction`, elementwise.
    pub fn add_scaled(&self, direction: &[f64], scale: f64) -> PolicyParams {
        assert_eq!(direction.len(), self.data.len());
        let data = self
            .data
            .iter()
            .zip(direction)
            .map(|(p, d)| p + scale * d)
            .collect();
        PolicyParams {
            layout: self.layout.clone(),
            data,
        }
    }

    fn logits_cached(&self, s: Vec2, acts: &mut Vec<Vec<f64>>) -> Vec<f64> {
        acts.clear();
        acts.push(vec![s.x, s.y]);
        for l in 0..self.num_layers() {
            let (w_off, b_off) = self.layer_offsets(l);
            let (n_in, n_out) = (self.layout[l], self.layout[l + 1]);
            let input = acts.last().unwrap();
            let mut out = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &self.data[w_off + o * n_in..w_off + (o + 1) * n_in];
                let z = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + self.data[b_off + o];
                out.push(z);
            }
            if l + 1 < self.num_layers() {
                out.iter_mut().for_each(|z| *z = z.tanh());
                acts.push(out);
            } else {
                return out;
            }
        }
        unreachable!("layout has at least one layer")
    }

    pub fn logits(&self, s: Vec2) -> [f64; NUM_ACTIONS] {
        let mut acts = Vec::new();
        let z = self.logits_cached(s, &mut acts);
        [z[0], z[1], z[2], z[3]]
    }

    /// Accumulate `scale * d log pi(a | s) / d params` into `grad`.
    fn accumulate_log_prob_grad(&self, s: Vec2, a: ActionIndex, scale: f64, grad: &mut [f64]) {
        let mut acts = Vec::new();
        let z = self.logits_cached(s, &mut acts);
        let p = softmax(&[z[0], z[1], z[2], z[3]]);
        let mut delta: Vec<f64> = (0..NUM_ACTIONS)
            .map(|i| scale * ((i == a.index()) as u8 as f64 - p[i]))
            .collect();
        for l in (0..self.num_layers()).rev() {
            let (w_off, b_off) = self.layer_offsets(l);
            let (n_in, n_out) = (self.layout[l], self.layout[l + 1]);
            let input = &acts[l];
            for o in 0..n_out {
                let d = delta[o];
                grad[b_off + o] += d;
                let row = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                row.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
            }
            if l > 0 {
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let row = &self.data[w_off + o * n_in..w_off + (o + 1) * n_in];
                    prev.iter_mut().zip(row).for_each(|(pv, w)| *pv += w * delta[o]);
                }
                // tanh'(z) = 1 - h^2
                prev.iter_mut()
                    .zip(input)
                    .for_each(|(pv, h)| *pv *= 1.0 - h * h);
                delta = prev;
            }
        }
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64; NUM_ACTIONS]) -> [f64; NUM_ACTIONS] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e = logits.map(|z| (z - max).exp());
    let sum: f64 = e.iter().sum();
    e.iter_mut().for_each(|v| *v /= sum);
    e
}

/// Scaled-uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
pub fn init_params(seed: u64, layout: &[usize]) -> Result<PolicyParams> {
    let mut params = PolicyParams::zeros(layout)?;
    let mut rng = rng_from(seed);
    for l in 0..params.num_layers() {
        let bound = 1.0 / (layout[l] as f64).sqrt();
        let (w, _) = params.layer_mut(l);
        w.iter_mut()
            .for_each(|v| *v = rng.random_range(-bound..bound));
    }
    Ok(params)
}

/// Action probabilities at state `s`.
pub fn forward(params: &PolicyParams, s: Vec2) -> [f64; NUM_ACTIONS] {
    softmax(&params.logits(s))
}

pub fn log_prob(params: &PolicyParams, s: Vec2, a: ActionIndex) -> f64 {
    let z = params.logits(s);
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z[a.index()] - lse
}

pub fn sample_action(params: &PolicyParams, s: Vec2, rng: &mut Rng) -> ActionIndex {
    let p = forward(params, s);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return ActionIndex::ALL[i];
        }
    }
    // rounding left the cumulative sum just below 1
    ActionIndex::ALL[p.iter().rposition(|&pi| pi > 0.0).unwrap_or(NUM_ACTIONS - 1)]
}

/// One episode: `states` has one more entry than `actions` and `rewards`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub entity_id: usize,
    pub states: Vec<Vec2>,
    pub actions: Vec<ActionIndex>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn final_position(&self) -> Vec2 {
        *self.states.last().expect("trajectory has an initial state")
    }

    pub fn reached_goal(&self, cfg: &EnvConfig) -> bool {
        (self.final_position() - cfg.goal).norm() < cfg.goal_radius
    }
}

pub fn collect_trajectory(
    params: &PolicyParams,
    cfg: &EnvConfig,
    entity: &EntityType,
    rng: &mut Rng,
) -> Trajectory {
    let mut state = env::reset(entity);
    let mut traj = Trajectory {
        entity_id: entity.id,
        states: vec![state.position],
        actions: Vec::new(),
        rewards: Vec::new(),
    };
    while !state.done && state.step < cfg.horizon {
        let a = sample_action(params, state.position, rng);
        let r = env::step(cfg, &state, a, entity).expect("episode is live");
        traj.actions.push(a);
        traj.rewards.push(r.reward);
        traj.states.push(r.next_state.position);
        state = r.next_state;
    }
    traj
}

pub fn collect_batch(
    params: &PolicyParams,
    cfg: &EnvConfig,
    entity: &EntityType,
    count: usize,
    rng: &mut Rng,
) -> Vec<Trajectory> {
    (0..count)
        .map(|_| collect_trajectory(params, cfg, entity, rng))
        .collect()
}

/// `G_t = sum_{u >= t} gamma^(u - t) r_u`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// No baseline: advantages are the raw returns-to-go.
    None,
    /// Per-timestep batch mean of `G_t` over the trajectories still running at `t`.
    BatchMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Inner learning rate.
    pub alpha: f64,
    pub gamma: f64,
    /// Rollouts per update.
    pub batch_size: usize,
    pub baseline: Baseline,
    /// Divide the step by the batch standard deviation of the advantages.
    /// This rescales the step length only; the gradient direction is unchanged.
    pub normalize_advantages: bool,
    pub env: EnvConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            gamma: 0.99,
            batch_size: 10,
            baseline: Baseline::BatchMean,
            normalize_advantages: true,
            env: EnvConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(CamlError::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(CamlError::Config(format!("gamma must be in [0, 1], got {}", self.gamma)));
        }
        if self.batch_size == 0 {
            return Err(CamlError::Config("batch_size must be at least 1".into()));
        }
        if self.env.horizon == 0 {
            return Err(CamlError::Config("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-step advantages `G_t - b_t` for every trajectory in the batch.
pub fn advantages(batch: &[Trajectory], gamma: f64, baseline: Baseline) -> Vec<Vec<f64>> {
    let returns: Vec<Vec<f64>> = batch
        .iter()
        .map(|t| discounted_returns(&t.rewards, gamma))
        .collect();
    match baseline {
        Baseline::None => returns,
        Baseline::BatchMean => {
            let max_len = returns.iter().map(Vec::len).max().unwrap_or(0);
            let mut sums = vec![0.0; max_len];
            let mut counts = vec![0usize; max_len];
            for g in &returns {
                for (t, v) in g.iter().enumerate() {
                    sums[t] += v;
                    counts[t] += 1;
                }
            }
            let means: Vec<f64> = sums
                .iter()
                .zip(&counts)
                .map(|(s, &c)| s / c as f64)
                .collect();
            returns
                .into_iter()
                .map(|g| g.iter().zip(&means).map(|(v, m)| v - m).collect())
                .collect()
        }
    }
}

/// `(1/K) sum_tau sum_t adv_t * grad log pi(a_t | s_t)`.
pub fn surrogate_gradient(
    params: &PolicyParams,
    batch: &[Trajectory],
    advantages: &[Vec<f64>],
) -> Vec<f64> {
    let mut grad = vec![0.0; params.len()];
    let k = batch.len() as f64;
    for (traj, adv) in batch.iter().zip(advantages) {
        for ((s, a), g) in traj.states.iter().zip(&traj.actions).zip(adv) {
            if *g != 0.0 {
                params.accumulate_log_prob_grad(*s, *a, g / k, &mut grad);
            }
        }
    }
    grad
}

/// `(1/K) sum_tau sum_t adv_t * log pi(a_t | s_t)`; its gradient is [`surrogate_gradient`].
pub fn surrogate_objective(
    params: &PolicyParams,
    batch: &[Trajectory],
    advantages: &[Vec<f64>],
) -> f64 {
    let k = batch.len() as f64;
    batch
        .iter()
        .zip(advantages)
        .map(|(traj, adv)| {
            traj.states
                .iter()
                .zip(&traj.actions)
                .zip(adv)
                .map(|((s, a), g)| g * log_prob(params, *s, *a))
                .sum::<f64>()
        })
        .sum::<f64>()
        / k
}

/// REINFORCE policy-gradient estimate for a batch under `cfg`.
pub fn policy_gradient(params: &PolicyParams, batch: &[Trajectory], cfg: &TrainConfig) -> Vec<f64> {
    let adv = advantages(batch, cfg.gamma, cfg.baseline);
    surrogate_gradient(params, batch, &adv)
}

fn advantage_scale(adv: &[Vec<f64>]) -> f64 {
    let n: usize = adv.iter().map(Vec::len).sum();
    if n < 2 {
        return 1.0;
    }
    let mean = adv.iter().flatten().sum::<f64>() / n as f64;
    let var = adv.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std > 1e-8 {
        1.0 / std
    } else {
        1.0
    }
}

/// One gradient-ascent step on expected return. Returns new parameters;
/// the input is left untouched.
pub fn reinforce_update(
    params: &PolicyParams,
    batch: &[Trajectory],
    cfg: &TrainConfig,
) -> PolicyParams {
    assert!(!batch.is_empty(), "reinforce_update needs a nonempty batch");
    let adv = advantages(batch, cfg.gamma, cfg.baseline);
    let grad = surrogate_gradient(params, batch, &adv);
    let scale = if cfg.normalize_advantages {
        advantage_scale(&adv)
    } else {
        1.0
    };
    params.add_scaled(&grad, cfg.alpha * scale)
}

/// Collect a batch on `entity` and apply one update. Returns the new
/// parameters and the batch the update was computed from.
pub fn train_step(
    params: &PolicyParams,
    entity: &EntityType,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> (PolicyParams, Vec<Trajectory>) {
    let batch = collect_batch(params, &cfg.env, entity, cfg.batch_size, rng);
    (reinforce_update(params, &batch, cfg), batch)
}

pub fn mean_return(batch: &[Trajectory]) -> f64 {
    batch.iter().map(Trajectory::episode_return).sum::<f64>() / batch.len() as f64
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointRepr {
    version: u32,
    layout: Vec<usize>,
    data: Vec<f64>,
}

impl PolicyParams {
    /// Versioned JSON checkpoint; floats round-trip bit-exactly.
    pub fn to_checkpoint(&self) -> String {
        let repr = CheckpointRepr {
            version: CHECKPOINT_VERSION,
            layout: self.layout.clone(),
            data: self.data.clone(),
        };
        serde_json::to_string(&repr).expect("checkpoint serializes") + "\n"
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let repr: CheckpointRepr = serde_json::from_str(text)
            .map_err(|e| CamlError::Input(format!("bad policy checkpoint: {e}")))?;
        if repr.version != CHECKPOINT_VERSION {
            return Err(CamlError::Input(format!(
                "unsupported checkpoint version {}",
                repr.version
            )));
        }
        PolicyParams::from_parts(repr.layout, repr.data)
    }
}
