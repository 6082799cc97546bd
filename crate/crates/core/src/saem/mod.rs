//! Stochastic approximation EM with a particle-filter E-step.

pub mod fisher;
pub mod fit;
pub mod mstep;
pub mod schedule;
pub mod stats;

pub use fit::{saem_fit, EstimateReport, SaemConfig};
pub use mstep::{complete_data_mle, m_step, MStep};
pub use schedule::{ParticleSchedule, StepSchedule};
pub use stats::{compute_stats, sa_update, SufficientStats};
