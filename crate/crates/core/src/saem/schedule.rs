//! Step-size and particle-count schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `a_m = 1` for `m ≤ warmup`, then `(m - warmup)^(-exponent)`.
///
/// The power-law tail satisfies `Σ a_m = ∞` and `Σ a_m² < ∞` exactly when the
/// exponent lies in `(0.5, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedule {
    pub warmup: usize,
    pub exponent: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule { warmup: 100, exponent: 0.8 }
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.exponent > 0.5 && self.exponent <= 1.0) {
            return Err(Error::Config(format!(
                "step-size exponent must lie in (0.5, 1], got {}",
                self.exponent
            )));
        }
        Ok(())
    }

    /// Step size for iteration `m ≥ 1`.
    pub fn step(&self, m: usize) -> f64 {
        assert!(m >= 1, "iterations are numbered from 1");
        if m <= self.warmup {
            1.0
        } else {
            ((m - self.warmup) as f64).powf(-self.exponent)
        }
    }
}

/// `K(m) = min(m, cap)`, at least one particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSchedule {
    pub cap: usize,
}

impl Default for ParticleSchedule {
    fn default() -> Self {
        ParticleSchedule { cap: 100 }
    }
}

impl ParticleSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.cap == 0 {
            return Err(Error::Config("particle cap must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn particles(&self, m: usize) -> usize {
        m.clamp(1, self.cap)
    }
}
