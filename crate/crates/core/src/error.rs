use thiserror::Error;

/// Errors raised by the simulator and dataset layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid gate {index}: {reason}")]
    InvalidGate { index: usize, reason: String },

    #[error("invalid device: {0}")]
    InvalidDevice(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("device sampling failed after {attempts} redraws: {reason}")]
    SamplingFailed { attempts: usize, reason: String },

    #[error("self-consistent solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("{count} interior islands found; only up to two are classified")]
    TooManyIslands { count: usize },

    #[error("island {index} carries zero integrated charge")]
    EmptyIsland { index: usize },

    #[error("graph order {0} is not supported (only order 1)")]
    UnsupportedOrder(usize),

    #[error("Markov chain is disconnected into {} components: {components:?}", components.len())]
    DisconnectedChain { components: Vec<Vec<usize>> },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dataset format error: {0}")]
    Format(String),

    #[error("truncated payload in {file}: expected {expected} bytes, found {found}")]
    Truncated {
        file: String,
        expected: usize,
        found: usize,
    },

    #[error("dataset kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
