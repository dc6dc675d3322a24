use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: duplicate observation for user {user}, day {day}, slot {slot}")]
    Conflict {
        path: PathBuf,
        line: usize,
        user: String,
        day: u32,
        slot: u32,
    },

    #[error("split error: {0}")]
    Split(String),

    #[error("generator error: {0}")]
    Generator(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("semantic cache error: {0}")]
    Cache(String),

    #[error("semantic key missing from cache: {0}")]
    MissingKey(String),

    #[error("provider failed for key {key}: {msg}")]
    Provider { key: String, msg: String },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("no learning signal: {0}")]
    NoTargets(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("gradient check failed for groups: {0}")]
    GradCheck(String),

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config { .. } => 2,
            Error::NonFinite(_) | Error::Numeric(_) | Error::GradCheck(_) => 4,
            _ => 3,
        }
    }
}
