//! Gate-voltage auto-tuning.
//!
//! A [`MapProvider`] turns a window center into a 30×30 current map, the
//! state CNN turns that into a probability vector, and [`tune`] runs a
//! derivative-free compass search that moves the window until the predicted
//! probabilities are close to a target vector.

pub mod error;
pub mod provider;
pub mod tuner;

pub use error::{Error, Result};
pub use provider::{MapProvider, SimulatorProvider, StackProvider, WINDOW_PIXELS};
pub use tuner::{fitness, probe, tune, FitnessTrace, Norm, Poll, TraceEntry, TuneConfig, TuneStatus};
