//! Experiment configuration: one TOML file, every field defaulted.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::divergence::DivergenceConfig;
use crate::env::{EntityType, Population, NUM_PERMUTATIONS};
use crate::error::{CamlError, Result};
use crate::meta::{Learner, MetaConfig};
use crate::policy::{TrainConfig, DEFAULT_LAYOUT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSpec {
    pub num_latent: usize,
    pub variants_per_latent: usize,
    pub variance_magnitude: f64,
    /// Keep the first variant of each latent group unperturbed.
    pub pure_first_variant: bool,
    /// Falls back to the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            num_latent: 6,
            variants_per_latent: 4,
            variance_magnitude: 0.5,
            pure_first_variant: false,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySpec {
    /// Training updates per entity policy.
    pub updates: usize,
    /// Distances are computed every `snapshot_every` updates.
    pub snapshot_every: usize,
    pub k: usize,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            updates: 40,
            snapshot_every: 10,
            k: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CamlSpec {
    pub n: usize,
    pub k: usize,
}

impl Default for CamlSpec {
    fn default() -> Self {
        Self { n: 12, k: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReptileSpec {
    pub inner_steps: usize,
    pub epsilon: f64,
}

impl Default for ReptileSpec {
    fn default() -> Self {
        Self {
            inner_steps: 3,
            epsilon: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSpec {
    /// Training iterations for every learner.
    pub iterations: usize,
    pub caml: CamlSpec,
    pub reptile: ReptileSpec,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        Self {
            iterations: 100,
            caml: CamlSpec::default(),
            reptile: ReptileSpec::default(),
        }
    }
}

/// How held-out query entities are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuerySplit {
    /// The last `query_count` latent groups are held out entirely; one
    /// perturbed variant of each becomes a query type.
    UnseenLatent,
    /// The last variant of each of the first `query_count` latent groups is
    /// held out; its siblings stay in the support set.
    UnseenVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub split: QuerySplit,
    pub query_count: usize,
    pub num_updates: usize,
    pub seeds: Vec<u64>,
    pub learners: Vec<Learner>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            split: QuerySplit::UnseenLatent,
            query_count: 3,
            num_updates: 5,
            seeds: vec![0, 1, 2, 3, 4],
            learners: Learner::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Run seed; every stochastic stage derives its stream from it.
    pub seed: u64,
    /// Seed of the shared initial policy parameters.
    pub init_seed: u64,
    pub layout: Vec<usize>,
    pub population: PopulationSpec,
    pub train: TrainConfig,
    pub divergence: DivergenceConfig,
    pub study: StudySpec,
    pub learners: LearnerSpec,
    pub evaluation: EvalSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            init_seed: 0,
            layout: DEFAULT_LAYOUT.to_vec(),
            population: PopulationSpec::default(),
            train: TrainConfig::default(),
            divergence: DivergenceConfig::default(),
            study: StudySpec::default(),
            learners: LearnerSpec::default(),
            evaluation: EvalSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CamlError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CamlError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn population_seed(&self) -> u64 {
        self.population.seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.population;
        if p.num_latent == 0 || p.num_latent > NUM_PERMUTATIONS {
            return Err(CamlError::InvalidPopulation(format!(
                "num_latent must be in 1..={NUM_PERMUTATIONS}, got {}",
                p.num_latent
            )));
        }
        if p.variants_per_latent == 0 || !(0.0..1.0).contains(&p.variance_magnitude) {
            return Err(CamlError::InvalidPopulation(format!(
                "need variants_per_latent >= 1 and variance in [0, 1), got {} and {}",
                p.variants_per_latent, p.variance_magnitude
            )));
        }
        self.train.validate()?;
        let s = &self.study;
        if s.snapshot_every == 0 || !s.updates.is_multiple_of(s.snapshot_every) {
            return Err(CamlError::Config(format!(
                "snapshot_every ({}) must divide updates ({})",
                s.snapshot_every, s.updates
            )));
        }
        if s.k == 0 {
            return Err(CamlError::Config("study.k must be at least 1".into()));
        }
        if self.divergence.m_samples == 0 {
            return Err(CamlError::Config("divergence.m_samples must be at least 1".into()));
        }
        self.meta_config().validate()?;
        if self.learners.reptile.inner_steps < 2 {
            return Err(CamlError::Config("reptile.inner_steps must be at least 2".into()));
        }
        let e = &self.evaluation;
        if e.seeds.is_empty() {
            return Err(CamlError::Config("evaluation.seeds must list at least one seed".into()));
        }
        if e.query_count == 0 {
            return Err(CamlError::Config("evaluation.query_count must be at least 1".into()));
        }
        match e.split {
            QuerySplit::UnseenLatent if e.query_count >= p.num_latent => {
                return Err(CamlError::Config(format!(
                    "unseen-latent split needs query_count < num_latent ({} >= {})",
                    e.query_count, p.num_latent
                )));
            }
            QuerySplit::UnseenVariant if e.query_count > p.num_latent || p.variants_per_latent < 2 => {
                return Err(CamlError::Config(
                    "unseen-variant split needs query_count <= num_latent and at least 2 variants".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn meta_config(&self) -> MetaConfig {
        MetaConfig {
            n: self.learners.caml.n,
            k: self.learners.caml.k,
            total_iterations: self.learners.iterations,
            init_seed: self.init_seed,
            layout: self.layout.clone(),
            train: self.train,
            divergence: self.divergence,
        }
    }
}

/// Support and query entities for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub support: Vec<EntityType>,
    pub query: Vec<EntityType>,
}

pub fn split_population(pop: &Population, split: QuerySplit, query_count: usize) -> Result<Split> {
    let v = pop.variants_per_latent;
    let groups = pop.num_latent;
    let (support, query): (Vec<EntityType>, Vec<EntityType>) = match split {
        QuerySplit::UnseenLatent => {
            if query_count >= groups {
                return Err(CamlError::Config("query_count must leave a support group".into()));
            }
            let held = groups - query_count;
            let support = pop
                .entities
                .iter()
                .filter(|e| e.latent_group < held)
                .cloned()
                .collect();
            let pick = if v > 1 { 1 } else { 0 };
            let query = (held..groups)
                .map(|g| pop.entities[g * v + pick].clone())
                .collect();
            (support, query)
        }
        QuerySplit::UnseenVariant => {
            if v < 2 || query_count > groups {
                return Err(CamlError::Config("unseen-variant split needs 2+ variants".into()));
            }
            let is_query = |e: &EntityType| e.latent_group < query_count && e.id % v == v - 1;
            pop.entities.iter().cloned().partition(|e| !is_query(e))
        }
    };
    Ok(Split { support, query })
}
