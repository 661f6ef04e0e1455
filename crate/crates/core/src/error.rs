use std::time::Duration;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("infeasible search space: {0}")]
    InfeasibleSpace(String),

    #[error("configuration does not match search space: {0}")]
    ConfigMismatch(String),

    #[error("objective failed: {0}")]
    Objective(#[from] ObjectiveError),

    #[error("no trial completed successfully")]
    AllTrialsFailed,

    #[error("corrupt log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },

    #[error("log was written with engine config hash {found}, expected {expected}")]
    ConfigHashMismatch { expected: String, found: String },

    #[error("log diverges from replay at line {line}: {reason}")]
    LogDivergence { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Failure of a single objective evaluation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("{0}")]
    Failed(String),

    #[error("command exited with {0}")]
    ExitStatus(String),

    #[error("could not parse reward from {0:?}")]
    Parse(String),

    #[error("reward {0} is not finite")]
    NonFinite(f64),

    #[error("timed out after {0:?}")]
    Timeout(Duration),
}
