//! Simulation core for gate-defined quantum-dot nanowires.
//!
//! The pipeline for one gate-voltage configuration is
//! [`device::compose_potential`] → [`thomas_fermi::ThomasFermiSolver`] →
//! island segmentation and capacitance model → Markov-chain transport
//! ([`transport`]) → current. [`simulate::Simulator`] bundles it, and
//! [`dataset`] turns it into training corpora.

pub mod dataset;
pub mod device;
pub mod error;
pub mod simulate;
pub mod thomas_fermi;
pub mod transport;

pub use device::{DeviceSpec, GateSpec, Grid, PhysicalConstants, PotentialProfile};
pub use error::{Error, Result};
pub use simulate::{MapResult, PointResult, SimulationOptions, Simulator};
pub use thomas_fermi::{
    CapacitanceModel, ChargeConfiguration, DensityProfile, IslandSegmentation, SolverOptions,
    StateLabel,
};
