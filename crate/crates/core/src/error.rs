use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {actual}")]
    InputShape { expected: usize, actual: usize },

    #[error("node {index} is not on this tape")]
    InvalidNode { index: usize },

    #[error("non-finite value in {what} (slot {slot})")]
    NumericFault { what: &'static str, slot: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid group `{id}`: {reason}")]
    InvalidGroup { id: String, reason: String },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("solver failure: {reason}; iterate = {iterate:?}")]
    SolverFailure { reason: String, iterate: Vec<f64> },

    #[error("dataset generation failed: {rejected} of {requested} samples rejected")]
    GenerationFailure { rejected: usize, requested: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("instance data error: {0}")]
    InstanceData(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
