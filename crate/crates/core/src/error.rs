use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("infeasible instance: {0}")]
    Infeasible(String),

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("optimality gap undefined: reference solution has zero norm")]
    UndefinedGap,

    #[error("interior point is not strictly feasible: row {row} has slack {slack}")]
    NonInterior { row: usize, slack: f64 },

    #[error("non-finite value in attention block {block}")]
    NumericFailure { block: usize },

    #[error("stale or missing forward cache: {0}")]
    StaleCache(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("dataset generation exhausted {retries} retries for sample {sample}")]
    RejectionBudget { sample: usize, retries: usize },

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("invalid hyperparameters: {0}")]
    HyperParams(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("parse error at {path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a numeric or runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::HyperParams(_)
                | Error::InvalidInstance(_)
                | Error::InvalidPermutation(_)
                | Error::DimensionMismatch { .. }
                | Error::Parse { .. }
                | Error::Io { .. }
                | Error::Checkpoint(_)
                | Error::Json(_)
        )
    }
}
