//! Experiment runner: configuration, the divergence study, training and
//! evaluation of every learner, and CSV/manifest export.

use std::path::PathBuf;

use thiserror::Error;

use crate::error::CamlError;

pub mod commands;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod output;
pub mod schema;
pub mod study;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Caml(#[from] CamlError),
    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{what} not found: {}", path.display())]
    NotFound { what: String, path: PathBuf },
    #[error("missing checkpoint for learner '{learner}': {}", path.display())]
    MissingCheckpoint { learner: String, path: PathBuf },
    #[error("malformed {what} at {}: {message}", path.display())]
    Malformed {
        what: String,
        path: PathBuf,
        message: String,
    },
    #[error(transparent)]
    Schema(#[from] schema::SchemaError),
}

impl HarnessError {
    /// 2 for bad input from the user, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Caml(
                CamlError::Config(_)
                | CamlError::InvalidPopulation(_)
                | CamlError::InvalidLayout(_)
                | CamlError::InvalidK { .. },
            ) => 2,
            _ => 1,
        }
    }
}
