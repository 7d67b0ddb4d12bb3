//! Divergence study: train one policy per entity type from a shared
//! initialization and track pairwise distances and clusters over training.

use rayon::prelude::*;

use crate::clustering::{k_medoids, MedoidAssignment};
use crate::divergence::{pairwise_divergence, DistanceMatrix};
use crate::env::EntityType;
use crate::error::Result;
use crate::policy::{collect_trajectory, init_params, train_step, PolicyParams, Trajectory};
use crate::rng::{derive_rng, derive_seed};

use super::config::ExperimentConfig;
use super::metrics::{adjusted_rand_index, intra_inter_means};

const TAG_TRAIN: u64 = 1;
const TAG_DIVERGENCE: u64 = 2;
const TAG_CLUSTER: u64 = 3;

#[derive(Debug, Clone)]
pub struct StudyCheckpoint {
    pub update: usize,
    pub distances: DistanceMatrix,
    pub assignment: MedoidAssignment,
    pub intra_mean: f64,
    pub inter_mean: f64,
    pub ari: f64,
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub checkpoints: Vec<StudyCheckpoint>,
    /// Latent group of each entity, in population order.
    pub groups: Vec<usize>,
}

struct Snapshot {
    policy: PolicyParams,
    trajectory: Trajectory,
}

fn train_entity(entity: &EntityType, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Snapshot>> {
    let mut rng = derive_rng(seed, &[TAG_TRAIN, entity.id as u64]);
    let mut params = init_params(cfg.init_seed, &cfg.layout)?;
    let mut snaps = Vec::new();
    for update in 1..=cfg.study.updates {
        params = train_step(&params, entity, &cfg.train, &mut rng).0;
        if update % cfg.study.snapshot_every == 0 {
            let trajectory = collect_trajectory(&params, &cfg.train.env, entity, &mut rng);
            snaps.push(Snapshot {
                policy: params.clone(),
                trajectory,
            });
        }
    }
    Ok(snaps)
}

pub fn run_divergence_study(entities: &[EntityType], cfg: &ExperimentConfig, seed: u64) -> Result<StudyOutcome> {
    cfg.validate()?;
    let per_entity: Vec<Vec<Snapshot>> = entities
        .par_iter()
        .map(|e| train_entity(e, cfg, seed))
        .collect::<Result<_>>()?;
    let groups: Vec<usize> = entities.iter().map(|e| e.latent_group).collect();
    let k = cfg.study.k.min(entities.len());

    let checkpoints = (0..cfg.study.updates / cfg.study.snapshot_every)
        .into_par_iter()
        .map(|c| {
            let update = (c + 1) * cfg.study.snapshot_every;
            let policies: Vec<PolicyParams> = per_entity.iter().map(|s| s[c].policy.clone()).collect();
            let trajectories: Vec<Trajectory> = per_entity.iter().map(|s| s[c].trajectory.clone()).collect();
            let mut rng = derive_rng(seed, &[TAG_DIVERGENCE, update as u64]);
            let distances = pairwise_divergence(&policies, &trajectories, &cfg.divergence, &mut rng)?;
            let assignment = k_medoids(&distances, k, derive_seed(seed, &[TAG_CLUSTER, update as u64]))?;
            let (intra_mean, inter_mean) = intra_inter_means(&distances, &groups);
            let ari = adjusted_rand_index(&assignment.labels, &groups);
            Ok(StudyCheckpoint {
                update,
                distances,
                assignment,
                intra_mean,
                inter_mean,
                ari,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyOutcome { checkpoints, groups })
}
