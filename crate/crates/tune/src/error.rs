use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("simulation failed: {0}")]
    Simulation(#[from] qdarray_core::Error),

    #[error("network evaluation failed: {0}")]
    Network(#[from] qdarray_nn::Error),

    #[error("axis {axis}: {value} outside [{lo}, {hi}]")]
    OutOfBounds {
        axis: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
