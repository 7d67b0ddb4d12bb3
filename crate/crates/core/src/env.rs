//! Personalized 2D particle environment.
//!
//! A point particle starts at the origin and must reach a goal (default
//! `(1, 1)`). Each commanded action is passed through an entity-specific
//! personalization: the four cardinal directions are permuted, then a fixed
//! per-action offset is added on the axis that the remapped direction leaves
//! at zero. Rewards are the negative squared distance to the goal after each
//! move.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{CamlError, Result};
use crate::rng::rng_from;

pub const NUM_ACTIONS: usize = 4;

/// Number of distinct remappings of the four actions.
pub const NUM_PERMUTATIONS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self * rhs.x, self * rhs.y)
    }
}

/// One of the four discrete commands: left, right, down, up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ActionIndex(u8);

impl ActionIndex {
    pub const LEFT: ActionIndex = ActionIndex(0);
    pub const RIGHT: ActionIndex = ActionIndex(1);
    pub const DOWN: ActionIndex = ActionIndex(2);
    pub const UP: ActionIndex = ActionIndex(3);

    pub const ALL: [ActionIndex; NUM_ACTIONS] =
        [Self::LEFT, Self::RIGHT, Self::DOWN, Self::UP];

    pub fn new(value: usize) -> Result<Self> {
        if value < NUM_ACTIONS {
            Ok(ActionIndex(value as u8))
        } else {
            Err(CamlError::Domain(format!("action index {value} out of range")))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl TryFrom<u8> for ActionIndex {
    type Error = CamlError;
    fn try_from(v: u8) -> Result<Self> {
        ActionIndex::new(v as usize)
    }
}

impl From<ActionIndex> for u8 {
    fn from(a: ActionIndex) -> u8 {
        a.0
    }
}

impl fmt::Display for ActionIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = ["left", "right", "down", "up"][self.index()];
        f.write_str(name)
    }
}

/// Unit displacement of each action in index order left, right, down, up.
pub fn canonical_actions() -> [Vec2; NUM_ACTIONS] {
    [
        Vec2::new(-1.0, 0.0),
        Vec2::new(1.0, 0.0),
        Vec2::new(0.0, -1.0),
        Vec2::new(0.0, 1.0),
    ]
}

/// All 24 permutations of `[0, 1, 2, 3]` in lexicographic order.
pub fn all_permutations() -> Vec<[u8; NUM_ACTIONS]> {
    let mut out = Vec::with_capacity(NUM_PERMUTATIONS);
    for a in 0..4u8 {
        for b in 0..4u8 {
            for c in 0..4u8 {
                for d in 0..4u8 {
                    let p = [a, b, c, d];
                    let mut seen = [false; 4];
                    p.iter().for_each(|&i| seen[i as usize] = true);
                    if seen.iter().all(|&s| s) {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

/// A personalized transition dynamic.
///
/// `remap[a]` is the index of the canonical direction that action `a`
/// actually moves along; `offsets[a]` is added on the other axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityType {
    pub id: usize,
    pub latent_group: usize,
    pub remap: [u8; NUM_ACTIONS],
    pub offsets: [f64; NUM_ACTIONS],
}

impl EntityType {
    /// The unpersonalized entity: identity remap and zero offsets.
    pub fn identity(id: usize) -> Self {
        Self {
            id,
            latent_group: 0,
            remap: [0, 1, 2, 3],
            offsets: [0.0; NUM_ACTIONS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; NUM_ACTIONS];
        for &r in &self.remap {
            let r = r as usize;
            if r >= NUM_ACTIONS || seen[r] {
                return Err(CamlError::InvalidPopulation(format!(
                    "entity {} remap {:?} is not a permutation",
                    self.id, self.remap
                )));
            }
            seen[r] = true;
        }
        if let Some(o) = self.offsets.iter().find(|o| !(o.abs() < 1.0)) {
            return Err(CamlError::InvalidPopulation(format!(
                "entity {} offset {o} must satisfy |offset| < 1",
                self.id
            )));
        }
        Ok(())
    }

    /// Actual unit displacement produced by commanding `a`.
    pub fn apply_personalization(&self, a: ActionIndex) -> Vec2 {
        let base = canonical_actions()[self.remap[a.index()] as usize];
        let offset = self.offsets[a.index()];
        if base.x != 0.0 {
            Vec2::new(base.x, offset)
        } else {
            Vec2::new(offset, base.y)
        }
    }
}

/// A generated set of entity types and the parameters that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub seed: u64,
    pub num_latent: usize,
    pub variants_per_latent: usize,
    pub variance_magnitude: f64,
    #[serde(default)]
    pub pure_first_variant: bool,
    pub entities: Vec<EntityType>,
}

impl Population {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("population serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let pop: Population = serde_json::from_str(text)
            .map_err(|e| CamlError::InvalidPopulation(format!("parse: {e}")))?;
        for e in &pop.entities {
            e.validate()?;
        }
        Ok(pop)
    }
}

/// Generate `num_latent * variants_per_latent` entity types.
///
/// Each latent group draws a distinct remap without replacement, and every
/// variant draws one offset per action from
/// `Uniform(-variance_magnitude, variance_magnitude)`, frozen thereafter.
pub fn make_population(
    num_latent: usize,
    variants_per_latent: usize,
    variance_magnitude: f64,
    seed: u64,
) -> Result<Population> {
    make_population_with(num_latent, variants_per_latent, variance_magnitude, false, seed)
}

/// As [`make_population`]; with `pure_first_variant` the first variant of
/// each group keeps zero offsets, so the bare remap is part of the population.
pub fn make_population_with(
    num_latent: usize,
    variants_per_latent: usize,
    variance_magnitude: f64,
    pure_first_variant: bool,
    seed: u64,
) -> Result<Population> {
    if num_latent == 0 || num_latent > NUM_PERMUTATIONS {
        return Err(CamlError::InvalidPopulation(format!(
            "num_latent must be in 1..={NUM_PERMUTATIONS}, got {num_latent}"
        )));
    }
    if variants_per_latent == 0 {
        return Err(CamlError::InvalidPopulation(
            "variants_per_latent must be at least 1".into(),
        ));
    }
    if !(0.0..1.0).contains(&variance_magnitude) {
        return Err(CamlError::InvalidPopulation(format!(
            "variance_magnitude must be in [0, 1), got {variance_magnitude}"
        )));
    }

    let mut rng = rng_from(seed);
    let mut perms = all_permutations();
    perms.shuffle(&mut rng);

    let mut entities = Vec::with_capacity(num_latent * variants_per_latent);
    for (group, remap) in perms.into_iter().take(num_latent).enumerate() {
        for variant in 0..variants_per_latent {
            let mut offsets = [0.0; NUM_ACTIONS];
            if !(pure_first_variant && variant == 0) && variance_magnitude > 0.0 {
                for o in offsets.iter_mut() {
                    *o = rng.random_range(-variance_magnitude..variance_magnitude);
                }
            }
            entities.push(EntityType {
                id: entities.len(),
                latent_group: group,
                remap,
                offsets,
            });
        }
    }

    Ok(Population {
        seed,
        num_latent,
        variants_per_latent,
        variance_magnitude,
        pure_first_variant,
        entities,
    })
}

/// Fixed task geometry shared by all entities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub goal: Vec2,
    pub horizon: usize,
    pub goal_radius: f64,
    pub step_scale: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            goal: Vec2::new(1.0, 1.0),
            horizon: 100,
            goal_radius: 0.01,
            step_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub position: Vec2,
    pub step: usize,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    pub done: bool,
}

pub fn reset(_entity: &EntityType) -> EnvState {
    EnvState {
        position: Vec2::ZERO,
        step: 0,
        done: false,
    }
}

pub fn step(
    cfg: &EnvConfig,
    state: &EnvState,
    a: ActionIndex,
    entity: &EntityType,
) -> Result<StepResult> {
    if state.done || state.step >= cfg.horizon {
        return Err(CamlError::EpisodeFinished { step: state.step });
    }
    let position = state.position + cfg.step_scale * entity.apply_personalization(a);
    let dist_sq = (position - cfg.goal).norm_sq();
    let next_step = state.step + 1;
    let done = dist_sq.sqrt() < cfg.goal_radius || next_step == cfg.horizon;
    Ok(StepResult {
        next_state: EnvState {
            position,
            step: next_step,
            done,
        },
        reward: -dist_sq,
        done,
    })
}
