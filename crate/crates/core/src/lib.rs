//! Simulation and least-squares estimation of stochastic SIR models with a
//! Fourier-periodic transmission rate and small Lévy noise.

pub mod contrast;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod levy;
pub mod model;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod theory;
pub mod transmission;

pub use error::{Error, Result};
pub use model::{ModelKind, SirParams, SirState};
pub use simulator::{ObservationGrid, Trajectory};
pub use transmission::ThetaParams;
