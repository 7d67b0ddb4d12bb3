use thiserror::Error;

/// Errors raised by the library layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CamlError {
    #[error("invalid population: {0}")]
    InvalidPopulation(String),
    #[error("episode already finished at step {step}")]
    EpisodeFinished { step: usize },
    #[error("invalid policy layout {0:?}: must start at 2 inputs and end at 4 logits")]
    InvalidLayout(Vec<usize>),
    #[error("empty support: cannot fit a density to zero states")]
    EmptySupport,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("invalid k = {k} for {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("invalid distance matrix: {0}")]
    InvalidMatrix(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = CamlError> = std::result::Result<T, E>;
