use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("malformed session: {0}")]
    MalformedSession(String),

    #[error("{count} cars would be connected but only {n_max} stations exist")]
    Concurrency { count: usize, n_max: usize },

    #[error("infeasible action: diagonal {diagonal} asks for {requested} of {available} cars")]
    InfeasibleAction {
        diagonal: usize,
        requested: usize,
        available: usize,
    },

    #[error("action has {got} diagonals, state has {expected}")]
    ActionShape { expected: usize, got: usize },

    #[error("action space of {size} exceeds enumeration cap {cap}")]
    ActionCapExceeded { size: u128, cap: usize },

    #[error("state at t={0} is terminal")]
    TerminalState(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}; lower the learning rate")]
    NonFiniteLoss {
        loss: f64,
        epoch: usize,
        batch: usize,
    },

    #[error("feature vector has length {got}, network expects {expected}")]
    FeatureShape { expected: usize, got: usize },

    #[error("brute-force search space {size} exceeds limit {limit}")]
    SearchTooLarge { size: u128, limit: u128 },

    #[error("session {index} received {got} of {needed} charge slots")]
    UnfinishedSchedule {
        index: usize,
        got: usize,
        needed: usize,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("test window overlaps training period {period} (days {start}..={end})")]
    Leakage {
        period: usize,
        start: usize,
        end: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
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
}
