//! Cluster-adaptive meta-learning for few-shot reinforcement learning over a
//! population of personalized environments.
//!
//! Modules, bottom up: [`env`] (personalized particle task), [`policy`]
//! (softmax MLP and REINFORCE), [`divergence`] (KDE occupancy estimates and
//! pairwise Jensen-Shannon distances), [`clustering`] (PAM k-medoids),
//! [`meta`] (CAML and the comparison learners) and [`harness`] (experiment
//! runner behind the `caml` binary).

pub mod clustering;
pub mod divergence;
pub mod env;
pub mod error;
pub mod harness;
pub mod meta;
pub mod policy;
pub mod rng;

pub use error::{CamlError, Result};
