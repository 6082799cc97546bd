//! Gaussian one-step transition densities of the Euler-discretized model.
//!
//! Given `(V_i, U_i)`, the pair `(V_{i+1}, U_{i+1})` is bivariate normal with
//! mean `(V_i + Δf, U_i + Δb)` and covariance
//!
//! ```text
//! Δ [ γ² + ρ²          ρ(γ + σ(V,U)) ]
//!   [ ρ(γ + σ(V,U))    σ(V,U)² + ρ²  ]
//! ```
//!
//! Everything is returned as a log-density.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{check_gating, GatingRates, ModelParams, State};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy)]
pub struct TransitionInput<'a> {
    pub prev: State,
    pub next: State,
    pub params: &'a ModelParams,
    pub dt: f64,
}

/// Mean and covariance of one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMoments {
    pub mean_v: f64,
    pub mean_u: f64,
    pub var_v: f64,
    pub var_u: f64,
    pub cov: f64,
    // The covariance factors exactly: det = (Δ·(γσ(V,U) − ρ²))². Keeping the
    // factors avoids cancellation when the correlation is close to one.
    gamma: f64,
    s: f64,
    rho: f64,
    dt: f64,
    rho_is_zero: bool,
}

/// A univariate normal law, used for the marginal and conditional pieces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: f64,
    pub var: f64,
}

impl Gaussian {
    pub fn log_density(&self, x: f64) -> Result<f64> {
        if !(self.var > 0.0) {
            return Err(Error::DegenerateTransition(format!("variance {} is not positive", self.var)));
        }
        Ok(log_normal(x, self.mean, self.var))
    }
}

#[inline]
pub(crate) fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

impl TransitionMoments {
    #[inline]
    pub fn from_rates(rates: &GatingRates, u: f64, p: &ModelParams, dt: f64) -> Self {
        let s = rates.diffusion_u(u, p.sigma);
        let rho2 = p.rho * p.rho;
        TransitionMoments {
            mean_v: rates.v + dt * rates.drift_v(u, p),
            mean_u: u + dt * rates.drift_u(u),
            var_v: dt * (p.gamma * p.gamma + rho2),
            var_u: dt * (s * s + rho2),
            cov: dt * p.rho * (p.gamma + s),
            gamma: p.gamma,
            s,
            rho: p.rho,
            dt,
            rho_is_zero: p.rho == 0.0,
        }
    }

    pub fn new(prev: State, p: &ModelParams, dt: f64) -> Self {
        Self::from_rates(&p.rates_at(prev.v), prev.u, p, dt)
    }

    pub fn marginal_v(&self) -> Gaussian {
        Gaussian { mean: self.mean_v, var: self.var_v }
    }

    pub fn marginal_u(&self) -> Gaussian {
        Gaussian { mean: self.mean_u, var: self.var_u }
    }

    /// Law of `U_{i+1}` given `V_{i+1}` (and the previous state).
    #[inline]
    pub fn cond_u_given_v(&self, v_next: f64) -> Gaussian {
        if self.rho_is_zero {
            return self.marginal_u();
        }
        let k = self.cov / self.var_v;
        Gaussian {
            mean: self.mean_u + k * (v_next - self.mean_v),
            var: self.det() / self.var_v,
        }
    }

    /// Law of `V_{i+1}` given `U_{i+1}` (and the previous state).
    #[inline]
    pub fn cond_v_given_u(&self, u_next: f64) -> Gaussian {
        if self.rho_is_zero {
            return self.marginal_v();
        }
        let k = self.cov / self.var_u;
        Gaussian {
            mean: self.mean_v + k * (u_next - self.mean_u),
            var: self.det() / self.var_u,
        }
    }

    /// Determinant of the covariance.
    pub fn det(&self) -> f64 {
        let r = self.dt * (self.gamma * self.s - self.rho * self.rho);
        r * r
    }

    pub fn log_joint(&self, next: State) -> Result<f64> {
        let det = self.det();
        if !(det > 0.0) || !(self.var_v > 0.0) || !(self.var_u > 0.0) {
            return Err(Error::DegenerateTransition(format!(
                "transition covariance is singular (det = {det:e})"
            )));
        }
        let dv = next.v - self.mean_v;
        let du = next.u - self.mean_u;
        // var_u·dv² − 2cov·dv·du + var_v·du² as a sum of squares
        let a = self.s * dv - self.rho * du;
        let b = self.rho * dv - self.gamma * du;
        let q = self.dt * (a * a + b * b) / det;
        Ok(-(2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * q)
    }
}

fn moments(input: &TransitionInput<'_>) -> Result<TransitionMoments> {
    if !(input.dt > 0.0) {
        return Err(Error::Config(format!("time step must be > 0, got {}", input.dt)));
    }
    let u = check_gating(input.prev.u)?;
    check_gating(input.next.u)?;
    Ok(TransitionMoments::new(State::new(input.prev.v, u), input.params, input.dt))
}

fn require_u_noise(input: &TransitionInput<'_>) -> Result<()> {
    let r = input.params.rates_at(input.prev.v);
    if !(r.diffusion_u(input.prev.u, input.params.sigma) > 0.0) {
        return Err(Error::DegenerateTransition(format!(
            "channel noise vanishes at u = {}",
            input.prev.u
        )));
    }
    Ok(())
}

pub fn log_joint(input: &TransitionInput<'_>) -> Result<f64> {
    let m = moments(input)?;
    require_u_noise(input)?;
    m.log_joint(input.next)
}

pub fn log_marginal_v(input: &TransitionInput<'_>) -> Result<f64> {
    moments(input)?.marginal_v().log_density(input.next.v)
}

pub fn log_marginal_u(input: &TransitionInput<'_>) -> Result<f64> {
    let m = moments(input)?;
    require_u_noise(input)?;
    m.marginal_u().log_density(input.next.u)
}

pub fn log_cond_u_given_v(input: &TransitionInput<'_>) -> Result<f64> {
    let m = moments(input)?;
    require_u_noise(input)?;
    m.cond_u_given_v(input.next.v).log_density(input.next.u)
}

pub fn log_cond_v_given_u(input: &TransitionInput<'_>) -> Result<f64> {
    let m = moments(input)?;
    require_u_noise(input)?;
    m.cond_v_given_u(input.next.u).log_density(input.next.v)
}
