//! Training and few-shot evaluation of every learner on a support/query split.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::EntityType;
use crate::error::{CamlError, Result};
use crate::meta::{
    bandit_select, caml_train, evaluate, joint_pretrain, pretrain_single, reptile_train, BanditLog,
    ClusterRound, EvalCurve, IterationRecord, Learner, MedoidPolicySet,
};
use crate::policy::{init_params, PolicyParams};
use crate::rng::{derive_rng, derive_seed};

use super::config::{ExperimentConfig, Split};

const TAG_TRAIN: u64 = 10;
const TAG_RANDOM_INIT: u64 = 11;
const TAG_EVAL: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPolicy {
    pub query_id: usize,
    pub params: PolicyParams,
}

/// What a learner hands to evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Trained {
    /// One initialization for every query type.
    Single { params: PolicyParams },
    /// A dedicated initialization per query entity.
    PerQuery { params: Vec<QueryPolicy> },
    /// Medoid candidates resolved by the bandit at test time.
    Medoids { set: MedoidPolicySet },
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub learner: Learner,
    pub trained: Trained,
    /// Clustering rounds, CAML only.
    pub rounds: Vec<ClusterRound>,
    /// Per-iteration records, CAML only.
    pub iterations: Vec<IterationRecord>,
    /// Training episodes that touched each query entity. Only the matched
    /// pretrain baseline is allowed to train on query entities.
    pub query_episodes: usize,
}

/// Support entity used by the unmatched pretrain baseline for `query`.
pub fn unmatched_source<'a>(support: &'a [EntityType], query: &EntityType) -> Result<&'a EntityType> {
    support
        .iter()
        .find(|e| e.latent_group != query.latent_group)
        .ok_or_else(|| CamlError::Input("no support entity outside the query's latent group".into()))
}

pub fn train_learner(learner: Learner, split: &Split, cfg: &ExperimentConfig, seed: u64) -> Result<TrainOutput> {
    let meta = cfg.meta_config();
    let mut rng = derive_rng(seed, &[TAG_TRAIN, learner as u64]);
    let mut out = TrainOutput {
        learner,
        trained: Trained::Single {
            params: PolicyParams::zeros(&meta.layout)?,
        },
        rounds: Vec::new(),
        iterations: Vec::new(),
        query_episodes: 0,
    };
    out.trained = match learner {
        Learner::Caml => {
            let run = caml_train(&split.support, &meta, &mut rng)?;
            out.rounds = run.rounds;
            out.iterations = run.iterations;
            Trained::Medoids { set: run.medoids }
        }
        Learner::Reptile => Trained::Single {
            params: reptile_train(
                &split.support,
                &meta,
                cfg.learners.reptile.inner_steps,
                cfg.learners.reptile.epsilon,
                &mut rng,
            )?,
        },
        Learner::Joint => Trained::Single {
            params: joint_pretrain(&split.support, &meta, &mut rng)?,
        },
        Learner::PretrainMatched => {
            let params = split
                .query
                .par_iter()
                .map(|q| {
                    let mut rng = derive_rng(seed, &[TAG_TRAIN, learner as u64, q.id as u64]);
                    Ok(QueryPolicy {
                        query_id: q.id,
                        params: pretrain_single(q, &meta, &mut rng)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            out.query_episodes = meta.total_iterations * meta.train.batch_size;
            Trained::PerQuery { params }
        }
        Learner::PretrainUnmatched => {
            let params = split
                .query
                .par_iter()
                .map(|q| {
                    let source = unmatched_source(&split.support, q)?;
                    let mut rng = derive_rng(seed, &[TAG_TRAIN, learner as u64, source.id as u64]);
                    Ok(QueryPolicy {
                        query_id: q.id,
                        params: pretrain_single(source, &meta, &mut rng)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Trained::PerQuery { params }
        }
        Learner::Random => Trained::Single {
            params: init_params(derive_seed(seed, &[TAG_RANDOM_INIT]), &meta.layout)?,
        },
    };
    Ok(out)
}

/// One (learner, query, seed) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub learner: Learner,
    pub query_id: usize,
    pub seed: u64,
    pub bandit: Option<BanditLog>,
    /// Query-entity episodes spent before the curve's first batch.
    pub pre_curve_episodes: usize,
    pub curve: EvalCurve,
}

pub fn evaluate_cell(
    learner: Learner,
    trained: &Trained,
    query: &EntityType,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<EvalCell> {
    let mut rng = derive_rng(cfg.seed, &[TAG_EVAL, seed, learner as u64, query.id as u64]);
    let shots = cfg.train.batch_size;
    let (init, bandit) = match trained {
        Trained::Single { params } => (params.clone(), None),
        Trained::PerQuery { params } => (
            params
                .iter()
                .find(|p| p.query_id == query.id)
                .map(|p| p.params.clone())
                .ok_or_else(|| CamlError::Input(format!("{learner} has no checkpoint for query {}", query.id)))?,
            None,
        ),
        Trained::Medoids { set } => {
            let (p, log) = bandit_select(set, query, shots, &cfg.train.env, &mut rng)?;
            (p, Some(log))
        }
    };
    let pre_curve_episodes = bandit.as_ref().map_or(0, |b| b.pulls.len());
    let curve = evaluate(&init, query, &cfg.train, cfg.evaluation.num_updates, &mut rng);
    Ok(EvalCell {
        learner,
        query_id: query.id,
        seed,
        bandit,
        pre_curve_episodes,
        curve,
    })
}

/// Evaluate one trained learner on every query type under every seed.
/// Cells run in parallel; the output order is (query, seed).
pub fn evaluate_learner(
    learner: Learner,
    trained: &Trained,
    queries: &[EntityType],
    cfg: &ExperimentConfig,
    seeds: &[u64],
) -> Result<Vec<EvalCell>> {
    let cells: Vec<(&EntityType, u64)> = queries
        .iter()
        .flat_map(|q| seeds.iter().map(move |&s| (q, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(q, s)| evaluate_cell(learner, trained, q, cfg, s))
        .collect()
}

/// Mean over cells of the curve entry at `update`.
pub fn mean_at_update(cells: &[EvalCell], update: usize) -> f64 {
    cells.iter().map(|c| c.curve.points[update].mean_return).sum::<f64>() / cells.len() as f64
}

/// Mean over cells and all curve entries.
pub fn mean_over_curve(cells: &[EvalCell]) -> f64 {
    let total: f64 = cells
        .iter()
        .map(|c| c.curve.points.iter().map(|p| p.mean_return).sum::<f64>() / c.curve.points.len() as f64)
        .sum();
    total / cells.len() as f64
}
