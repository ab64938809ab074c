use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidSpec(String),

    #[error("layer {layer}: expected {expected}, found {found}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        found: String,
    },

    #[error("input has {found} values, batch of {batch} needs {expected}")]
    InputSize {
        batch: usize,
        expected: usize,
        found: usize,
    },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),

    #[error("weight file integrity check failed: {0}")]
    Integrity(String),

    #[error("weight file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
