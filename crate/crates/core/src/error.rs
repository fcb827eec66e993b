//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("consensus gain k = {0} must be positive")]
    NonPositiveGain(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid neighbor count K = {k} for {n} agents (need 1 <= K <= N-1)")]
    NeighborCount { k: usize, n: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("simulation fault: {0}")]
    Physics(String),

    #[error("call sequence violation: {0}")]
    Sequence(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("gradient tape is stale: network parameters changed since the forward pass")]
    StaleTape,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("episode log error: {0}")]
    Log(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    TomlParse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
