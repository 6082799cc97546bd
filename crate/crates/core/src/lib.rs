//! Simulation, particle filtering and SAEM-SMC estimation for the partially
//! observed stochastic Morris-Lecar neuron model.
//!
//! Only the membrane potential `V` is observed; the K⁺ gating variable `U` is
//! imputed by a sequential Monte Carlo filter inside a stochastic
//! approximation EM loop.

pub mod cli;
pub mod densities;
pub mod error;
pub mod experiments;
pub mod io;
pub mod model;
pub mod rng;
pub mod saem;
pub mod simulate;
pub mod smc;

pub use error::{Error, Result};
pub use model::{ModelParams, State, Theta};
pub use rng::StreamSeed;
pub use simulate::Trajectory;
