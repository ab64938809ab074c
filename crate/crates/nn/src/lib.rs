//! Minimal neural-network engine for sweep, map and sub-map models.
//!
//! Networks are stacks of [`LayerSpec`]s evaluated on batches of row-major
//! samples in `f64`. Dense and convolution layers run on `matrixmultiply`
//! kernels; convolutions use an im2col lowering.

pub mod error;
mod gemm;
pub mod io;
pub mod network;
pub mod spec;
pub mod tasks;
pub mod train;

pub use error::{Error, Result};
pub use io::{load_weights, load_weights_for, save_weights};
pub use network::{Mode, Network, Tensor, Weights};
pub use spec::{LayerSpec, NetworkSpec, Shape};
pub use tasks::{charge_accuracy, predict_probability_vector, state_accuracy, top1_accuracy};
pub use train::{gradient_check, train, train_with, EpochMetrics, LossKind, Metrics, TrainConfig};
