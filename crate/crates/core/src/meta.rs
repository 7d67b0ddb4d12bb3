//! Cluster-adaptive meta-learning (CAML), bandit initialization at test
//! time, the comparison learners and the few-shot evaluation protocol.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::clustering::{k_medoids, MedoidAssignment};
use crate::divergence::{pairwise_divergence, DivergenceConfig};
use crate::env::{EntityType, EnvConfig, Vec2};
use crate::error::{CamlError, Result};
use crate::policy::{
    collect_batch, collect_trajectory, init_params, mean_return, reinforce_update, train_step,
    PolicyParams, TrainConfig, Trajectory, DEFAULT_LAYOUT,
};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    /// Number of saved policies per clustering round.
    pub n: usize,
    /// Number of medoids.
    pub k: usize,
    pub total_iterations: usize,
    /// Seed of the shared initial parameters.
    pub init_seed: u64,
    pub layout: Vec<usize>,
    pub train: TrainConfig,
    pub divergence: DivergenceConfig,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            n: 12,
            k: 6,
            total_iterations: 100,
            init_seed: 0,
            layout: DEFAULT_LAYOUT.to_vec(),
            train: TrainConfig::default(),
            divergence: DivergenceConfig::default(),
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.k == 0 || self.n < self.k {
            return Err(CamlError::Config(format!(
                "need n >= k >= 1, got n = {}, k = {}",
                self.n, self.k
            )));
        }
        if self.total_iterations < self.n {
            return Err(CamlError::Config(format!(
                "total_iterations ({}) must be at least n ({})",
                self.total_iterations, self.n
            )));
        }
        Ok(())
    }

    pub fn initial_params(&self) -> Result<PolicyParams> {
        init_params(self.init_seed, &self.layout)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedoidPolicySet {
    pub medoid_policies: Vec<PolicyParams>,
    pub medoid_trajectories: Vec<Trajectory>,
    /// Assignment over the pool the medoids were chosen from.
    pub assignment: MedoidAssignment,
    pub generation: usize,
}

impl MedoidPolicySet {
    pub fn k(&self) -> usize {
        self.medoid_policies.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("medoid set serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: MedoidPolicySet = serde_json::from_str(text)
            .map_err(|e| CamlError::Input(format!("bad medoid checkpoint: {e}")))?;
        if set.medoid_policies.len() != set.medoid_trajectories.len() || set.medoid_policies.is_empty() {
            return Err(CamlError::Input("medoid policies and trajectories disagree".into()));
        }
        Ok(set)
    }
}

/// One clustering event during CAML training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRound {
    pub generation: usize,
    /// Number of training iterations completed when clustering ran.
    pub iteration: usize,
    pub pool_size: usize,
    pub cost: f64,
    pub medoid_entity_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub entity_id: usize,
    /// Medoid the adaptation started from; `None` during the first phase.
    pub start_medoid: Option<usize>,
    pub mean_return: f64,
}

#[derive(Debug, Clone)]
pub struct CamlRun {
    pub medoids: MedoidPolicySet,
    pub rounds: Vec<ClusterRound>,
    pub iterations: Vec<IterationRecord>,
}

struct Saved {
    policy: PolicyParams,
    trajectory: Trajectory,
}

fn adapt_and_save(
    start: &PolicyParams,
    entity: &EntityType,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> (Saved, f64) {
    let (policy, batch) = train_step(start, entity, cfg, rng);
    let trajectory = collect_trajectory(&policy, &cfg.env, entity, rng);
    (Saved { policy, trajectory }, mean_return(&batch))
}

fn cluster(pool: Vec<Saved>, cfg: &MetaConfig, generation: usize, rng: &mut Rng) -> Result<MedoidPolicySet> {
    let (policies, trajectories): (Vec<_>, Vec<_>) =
        pool.into_iter().map(|s| (s.policy, s.trajectory)).unzip();
    let d = pairwise_divergence(&policies, &trajectories, &cfg.divergence, rng)?;
    let assignment = k_medoids(&d, cfg.k, rng.random())?;
    Ok(MedoidPolicySet {
        medoid_policies: assignment
            .medoid_indices
            .iter()
            .map(|&i| policies[i].clone())
            .collect(),
        medoid_trajectories: assignment
            .medoid_indices
            .iter()
            .map(|&i| trajectories[i].clone())
            .collect(),
        assignment,
        generation,
    })
}

fn round_record(set: &MedoidPolicySet, iteration: usize, pool_size: usize) -> ClusterRound {
    ClusterRound {
        generation: set.generation,
        iteration,
        pool_size,
        cost: set.assignment.cost,
        medoid_entity_ids: set.medoid_trajectories.iter().map(|t| t.entity_id).collect(),
    }
}

/// Train CAML on `population`.
///
/// The first `n` iterations adapt the shared initialization to sampled
/// entities and the resulting policies are clustered into `k` medoids.
/// Afterwards each iteration adapts a uniformly chosen medoid to a sampled
/// entity; once `n` adapted policies have accumulated they are clustered
/// together with the current medoids to produce the next medoid set.
pub fn caml_train(population: &[EntityType], cfg: &MetaConfig, rng: &mut Rng) -> Result<CamlRun> {
    if population.is_empty() {
        return Err(CamlError::Input("empty population".into()));
    }
    cfg.validate()?;
    let theta = cfg.initial_params()?;
    let mut iterations = Vec::with_capacity(cfg.total_iterations);
    let mut rounds = Vec::new();

    let mut pool = Vec::with_capacity(cfg.n);
    for it in 0..cfg.n {
        let entity = &population[rng.random_range(0..population.len())];
        let (saved, ret) = adapt_and_save(&theta, entity, &cfg.train, rng);
        pool.push(saved);
        iterations.push(IterationRecord {
            iteration: it,
            entity_id: entity.id,
            start_medoid: None,
            mean_return: ret,
        });
    }
    let mut medoids = cluster(pool, cfg, 0, rng)?;
    rounds.push(round_record(&medoids, cfg.n, cfg.n));

    let mut pending = Vec::with_capacity(cfg.n);
    for it in cfg.n..cfg.total_iterations {
        let entity = &population[rng.random_range(0..population.len())];
        let m = rng.random_range(0..medoids.k());
        let (saved, ret) = adapt_and_save(&medoids.medoid_policies[m], entity, &cfg.train, rng);
        pending.push(saved);
        iterations.push(IterationRecord {
            iteration: it,
            entity_id: entity.id,
            start_medoid: Some(m),
            mean_return: ret,
        });
        if pending.len() == cfg.n {
            let mut pool: Vec<Saved> = medoids
                .medoid_policies
                .iter()
                .zip(&medoids.medoid_trajectories)
                .map(|(p, t)| Saved {
                    policy: p.clone(),
                    trajectory: t.clone(),
                })
                .collect();
            pool.append(&mut pending);
            let pool_size = pool.len();
            medoids = cluster(pool, cfg, medoids.generation + 1, rng)?;
            rounds.push(round_record(&medoids, it + 1, pool_size));
        }
    }

    Ok(CamlRun {
        medoids,
        rounds,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditPull {
    pub medoid_index: usize,
    pub episode_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditLog {
    pub pulls: Vec<BanditPull>,
    pub chosen_index: usize,
}

/// Spend `shots` episodes on the query entity, spread round-robin over the
/// medoids (the remainder goes to distinct arms chosen uniformly), and pick
/// the medoid with the best single-episode return. Ties go to the lowest index.
pub fn bandit_select(
    medoids: &MedoidPolicySet,
    query: &EntityType,
    shots: usize,
    env: &EnvConfig,
    rng: &mut Rng,
) -> Result<(PolicyParams, BanditLog)> {
    let k = medoids.k();
    if shots == 0 {
        return Err(CamlError::Input("bandit needs at least one shot".into()));
    }
    if k == 0 {
        return Err(CamlError::Input("no medoids to choose from".into()));
    }
    let mut arms: Vec<usize> = (0..shots / k).flat_map(|_| 0..k).collect();
    arms.extend(index::sample(rng, k, shots % k).iter());

    let pulls: Vec<BanditPull> = arms
        .into_iter()
        .map(|m| {
            let t = collect_trajectory(&medoids.medoid_policies[m], env, query, rng);
            BanditPull {
                medoid_index: m,
                episode_return: t.episode_return(),
            }
        })
        .collect();
    let chosen = pulls
        .iter()
        .fold(None::<BanditPull>, |best, p| match best {
            Some(b)
                if b.episode_return > p.episode_return
                    || (b.episode_return == p.episode_return && b.medoid_index <= p.medoid_index) =>
            {
                Some(b)
            }
            _ => Some(*p),
        })
        .expect("at least one pull");
    Ok((
        medoids.medoid_policies[chosen.medoid_index].clone(),
        BanditLog {
            pulls,
            chosen_index: chosen.medoid_index,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub update: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub goal_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndPosition {
    pub update: usize,
    pub episode: usize,
    pub position: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    pub points: Vec<CurvePoint>,
    pub end_positions: Vec<EndPosition>,
    /// Episodes run on the query entity.
    pub episodes: usize,
}

fn summarize(update: usize, batch: &[Trajectory], env: &EnvConfig) -> CurvePoint {
    let n = batch.len() as f64;
    let mean = mean_return(batch);
    let var = batch
        .iter()
        .map(|t| (t.episode_return() - mean).powi(2))
        .sum::<f64>()
        / n;
    CurvePoint {
        update,
        mean_return: mean,
        std_return: var.sqrt(),
        goal_rate: batch.iter().filter(|t| t.reached_goal(env)).count() as f64 / n,
    }
}

/// Few-shot evaluation. Entry `u` of the curve is the mean return of the
/// batch collected after `u` updates; entry 0 is the initialization batch.
pub fn evaluate(
    init: &PolicyParams,
    query: &EntityType,
    cfg: &TrainConfig,
    num_updates: usize,
    rng: &mut Rng,
) -> EvalCurve {
    let mut params = init.clone();
    let mut points = Vec::with_capacity(num_updates + 1);
    let mut end_positions = Vec::new();
    let mut episodes = 0;
    for update in 0..=num_updates {
        let batch = collect_batch(&params, &cfg.env, query, cfg.batch_size, rng);
        episodes += batch.len();
        points.push(summarize(update, &batch, &cfg.env));
        end_positions.extend(batch.iter().enumerate().map(|(episode, t)| EndPosition {
            update,
            episode,
            position: t.final_position(),
        }));
        if update < num_updates {
            params = reinforce_update(&params, &batch, cfg);
        }
    }
    EvalCurve {
        points,
        end_positions,
        episodes,
    }
}

/// First-order meta-learning: adapt the initialization with `inner_steps`
/// updates on a sampled entity, then move it a fraction `epsilon` toward
/// the adapted weights.
pub fn reptile_train(
    population: &[EntityType],
    cfg: &MetaConfig,
    inner_steps: usize,
    epsilon: f64,
    rng: &mut Rng,
) -> Result<PolicyParams> {
    if inner_steps < 2 {
        return Err(CamlError::Config(format!(
            "reptile needs more than one inner step, got {inner_steps}"
        )));
    }
    if population.is_empty() {
        return Err(CamlError::Input("empty population".into()));
    }
    cfg.train.validate()?;
    let mut theta = cfg.initial_params()?;
    for _ in 0..cfg.total_iterations {
        let entity = &population[rng.random_range(0..population.len())];
        let mut adapted = theta.clone();
        for _ in 0..inner_steps {
            adapted = train_step(&adapted, entity, &cfg.train, rng).0;
        }
        let delta: Vec<f64> = adapted
            .as_slice()
            .iter()
            .zip(theta.as_slice())
            .map(|(a, t)| a - t)
            .collect();
        theta = if epsilon == 1.0 {
            adapted
        } else {
            theta.add_scaled(&delta, epsilon)
        };
    }
    Ok(theta)
}

/// One policy trained on batches whose episodes each draw a fresh entity.
pub fn joint_pretrain(population: &[EntityType], cfg: &MetaConfig, rng: &mut Rng) -> Result<PolicyParams> {
    if population.is_empty() {
        return Err(CamlError::Input("empty population".into()));
    }
    cfg.train.validate()?;
    let mut params = cfg.initial_params()?;
    for _ in 0..cfg.total_iterations {
        let batch: Vec<Trajectory> = (0..cfg.train.batch_size)
            .map(|_| {
                let entity = &population[rng.random_range(0..population.len())];
                collect_trajectory(&params, &cfg.train.env, entity, rng)
            })
            .collect();
        params = reinforce_update(&params, &batch, &cfg.train);
    }
    Ok(params)
}

/// Plain VPG on a single entity for `total_iterations` updates.
pub fn pretrain_single(entity: &EntityType, cfg: &MetaConfig, rng: &mut Rng) -> Result<PolicyParams> {
    cfg.train.validate()?;
    let mut params = cfg.initial_params()?;
    for _ in 0..cfg.total_iterations {
        params = train_step(&params, entity, &cfg.train, rng).0;
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Learner {
    Caml,
    Reptile,
    Joint,
    PretrainMatched,
    PretrainUnmatched,
    Random,
}

impl Learner {
    pub const ALL: [Learner; 6] = [
        Learner::Caml,
        Learner::Reptile,
        Learner::Joint,
        Learner::PretrainMatched,
        Learner::PretrainUnmatched,
        Learner::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Learner::Caml => "caml",
            Learner::Reptile => "reptile",
            Learner::Joint => "joint",
            Learner::PretrainMatched => "pretrain-matched",
            Learner::PretrainUnmatched => "pretrain-unmatched",
            Learner::Random => "random",
        }
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Learner {
    type Err = CamlError;
    fn from_str(s: &str) -> Result<Self> {
        Learner::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Learner::ALL.iter().map(|l| l.name()).collect();
                CamlError::Config(format!("unknown learner '{s}'; valid learners: {}", names.join(", ")))
            })
    }
}
