//! Command-line driver: simulate sweeps and maps, generate datasets, train
//! and evaluate the networks, run the auto-tuner and export images.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod pgm;
pub mod tasks;

pub use args::Cli;
pub use commands::run;
pub use error::{CliError, ErrorKind, Result};
