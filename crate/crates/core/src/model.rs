//! Stochastic Morris-Lecar dynamics.
//!
//! ```text
//! dV = f(V, U) dt + γ dB̃
//! dU = b(V, U) dt + σ(V, U) dB
//! ```
//!
//! with `f` the membrane current balance, `b` the K⁺ gating kinetics and
//! `σ(V, U) = σ sqrt(2 αβ/(α+β) U (1-U))` the channel noise, which vanishes on
//! the boundary of the unit interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on `u ∈ [0, 1]` before a gating value is rejected.
pub const U_TOLERANCE: f64 = 1e-9;

/// Full parameter set: the estimated subset plus the fixed constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Ca²⁺ conductance, µS/cm².
    #[serde(rename = "g_Ca")]
    pub g_ca: f64,
    /// K⁺ conductance, µS/cm².
    #[serde(rename = "g_K")]
    pub g_k: f64,
    /// Leak conductance, µS/cm².
    #[serde(rename = "g_L")]
    pub g_l: f64,
    /// Reversal potentials, mV.
    #[serde(rename = "V_Ca")]
    pub v_ca: f64,
    #[serde(rename = "V_K")]
    pub v_k: f64,
    #[serde(rename = "V_L")]
    pub v_l: f64,
    /// Input current, µA/cm².
    #[serde(rename = "I")]
    pub i_ext: f64,
    /// Membrane capacitance, µF/cm².
    #[serde(rename = "C", default = "one")]
    pub c: f64,
    /// Rate scaling of the channel kinetics, ms⁻¹.
    pub phi: f64,
    /// Current noise, mV·ms^(-1/2).
    pub gamma: f64,
    /// Channel noise, ms^(-1/2).
    pub sigma: f64,
    #[serde(rename = "V1")]
    pub v1: f64,
    #[serde(rename = "V2")]
    pub v2: f64,
    #[serde(rename = "V3")]
    pub v3: f64,
    #[serde(rename = "V4")]
    pub v4: f64,
    /// Correlation between the two driving noises.
    #[serde(default)]
    pub rho: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ModelParams {
    /// Class II membrane used for the simulation study.
    fn default() -> Self {
        ModelParams {
            g_ca: 0.22,
            g_k: 0.4,
            g_l: 0.1,
            v_ca: 120.0,
            v_k: -84.0,
            v_l: -60.0,
            i_ext: 4.5,
            c: 1.0,
            phi: 0.04,
            gamma: 1.0,
            sigma: 0.03,
            v1: -1.2,
            v2: 18.0,
            v3: 2.0,
            v4: 30.0,
            rho: 0.0,
        }
    }
}

impl ModelParams {
    /// Checks every parameter invariant, including conductance signs.
    pub fn validate(&self) -> Result<()> {
        self.validate_dynamics()?;
        if self.g_ca < 0.0 || self.g_k < 0.0 {
            return Err(Error::InvalidParams(format!(
                "conductances must be nonnegative (g_Ca = {}, g_K = {})",
                self.g_ca, self.g_k
            )));
        }
        Ok(())
    }

    /// The subset of invariants the transition densities depend on. Estimates
    /// produced mid-fit are only held to these.
    pub fn validate_dynamics(&self) -> Result<()> {
        let all = [
            self.g_ca, self.g_k, self.g_l, self.v_ca, self.v_k, self.v_l, self.i_ext, self.c,
            self.phi, self.gamma, self.sigma, self.v1, self.v2, self.v3, self.v4, self.rho,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams("non-finite parameter value".into()));
        }
        if self.gamma <= 0.0 {
            return Err(Error::InvalidParams(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(Error::InvalidParams(format!("sigma must lie in (0, 1], got {}", self.sigma)));
        }
        if self.c <= 0.0 {
            return Err(Error::InvalidParams(format!("C must be > 0, got {}", self.c)));
        }
        if self.phi <= 0.0 {
            return Err(Error::InvalidParams(format!("phi must be > 0, got {}", self.phi)));
        }
        if self.v2 == 0.0 || self.v4 == 0.0 {
            return Err(Error::InvalidParams("V2 and V4 must be nonzero".into()));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidParams(format!("rho must lie in [-1, 1], got {}", self.rho)));
        }
        Ok(())
    }

    pub fn theta(&self) -> Theta {
        Theta {
            g_ca: self.g_ca,
            g_k: self.g_k,
            g_l: self.g_l,
            v_ca: self.v_ca,
            v_k: self.v_k,
            i_ext: self.i_ext,
            gamma: self.gamma,
            phi: self.phi,
        }
    }

    /// Replace the estimated subset, keeping the fixed constants.
    pub fn with_theta(&self, t: &Theta) -> ModelParams {
        ModelParams {
            g_ca: t.g_ca,
            g_k: t.g_k,
            g_l: t.g_l,
            v_ca: t.v_ca,
            v_k: t.v_k,
            i_ext: t.i_ext,
            gamma: t.gamma,
            phi: t.phi,
            ..*self
        }
    }

    /// Rates and equilibrium values at membrane potential `v`.
    #[inline]
    pub fn rates_at(&self, v: f64) -> GatingRates {
        let x = (v - self.v3) / self.v4;
        let half_cosh = 0.5 * (0.5 * x).cosh();
        let th = x.tanh();
        // φ-free factors; α = φ·alpha_unit, β = φ·beta_unit
        let alpha_unit = half_cosh * (1.0 + th);
        let beta_unit = half_cosh * (1.0 - th);
        GatingRates {
            v,
            m_inf: 0.5 * (1.0 + ((v - self.v1) / self.v2).tanh()),
            alpha_unit,
            beta_unit,
            phi: self.phi,
        }
    }
}

/// Gating functions evaluated at a fixed membrane potential. All particles in
/// one filter step share `V_{i-1}`, so these are computed once per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatingRates {
    pub v: f64,
    pub m_inf: f64,
    pub alpha_unit: f64,
    pub beta_unit: f64,
    pub phi: f64,
}

impl GatingRates {
    #[inline]
    pub fn alpha(&self) -> f64 {
        self.phi * self.alpha_unit
    }

    #[inline]
    pub fn beta(&self) -> f64 {
        self.phi * self.beta_unit
    }

    /// Drift of V, linear in `u`.
    #[inline]
    pub fn drift_v(&self, u: f64, p: &ModelParams) -> f64 {
        let v = self.v;
        (-p.g_ca * self.m_inf * (v - p.v_ca) - p.g_k * u * (v - p.v_k) - p.g_l * (v - p.v_l) + p.i_ext)
            / p.c
    }

    /// φ-free factor of the gating drift: `b = φ·b̃`.
    #[inline]
    pub fn drift_u_unit(&self, u: f64) -> f64 {
        self.alpha_unit * (1.0 - u) - self.beta_unit * u
    }

    #[inline]
    pub fn drift_u(&self, u: f64) -> f64 {
        self.phi * self.drift_u_unit(u)
    }

    /// φ-free factor of the squared channel noise: `σ(V,U)² = σ²·φ·c̃`.
    #[inline]
    pub fn diffusion_u_sq_unit(&self, u: f64) -> f64 {
        let s = self.alpha_unit + self.beta_unit;
        let harmonic = if s > 0.0 {
            2.0 * self.alpha_unit * self.beta_unit / s
        } else {
            0.0
        };
        harmonic * u * (1.0 - u)
    }

    #[inline]
    pub fn diffusion_u(&self, u: f64, sigma: f64) -> f64 {
        (sigma * sigma * self.phi * self.diffusion_u_sq_unit(u)).max(0.0).sqrt()
    }

    /// Stationary gating value `α/(α+β)`, the root of `b`.
    pub fn u_stationary(&self) -> f64 {
        self.alpha_unit / (self.alpha_unit + self.beta_unit)
    }
}

/// Rejects `u` outside `[0, 1]` beyond [`U_TOLERANCE`], otherwise clamps it.
pub fn check_gating(u: f64) -> Result<f64> {
    if u.is_finite() && (-U_TOLERANCE..=1.0 + U_TOLERANCE).contains(&u) {
        Ok(u.clamp(0.0, 1.0))
    } else {
        Err(Error::GatingOutOfRange(u))
    }
}

pub fn m_infty(v: f64, p: &ModelParams) -> f64 {
    0.5 * (1.0 + ((v - p.v1) / p.v2).tanh())
}

/// Opening rate of the K⁺ channels.
pub fn alpha(v: f64, p: &ModelParams) -> f64 {
    p.rates_at(v).alpha()
}

/// Closing rate of the K⁺ channels.
pub fn beta(v: f64, p: &ModelParams) -> f64 {
    p.rates_at(v).beta()
}

pub fn drift_v(v: f64, u: f64, p: &ModelParams) -> Result<f64> {
    let u = check_gating(u)?;
    Ok(p.rates_at(v).drift_v(u, p))
}

pub fn drift_u(v: f64, u: f64, p: &ModelParams) -> Result<f64> {
    let u = check_gating(u)?;
    Ok(p.rates_at(v).drift_u(u))
}

pub fn diffusion_u(v: f64, u: f64, p: &ModelParams) -> Result<f64> {
    let u = check_gating(u)?;
    Ok(p.rates_at(v).diffusion_u(u, p.sigma))
}

/// A point `(V, U)` of the coupled process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub v: f64,
    pub u: f64,
}

impl State {
    pub fn new(v: f64, u: f64) -> Self {
        State { v, u }
    }
}

/// The estimated parameter vector θ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theta {
    #[serde(rename = "g_Ca")]
    pub g_ca: f64,
    #[serde(rename = "g_K")]
    pub g_k: f64,
    #[serde(rename = "g_L")]
    pub g_l: f64,
    #[serde(rename = "V_Ca")]
    pub v_ca: f64,
    #[serde(rename = "V_K")]
    pub v_k: f64,
    #[serde(rename = "I")]
    pub i_ext: f64,
    pub gamma: f64,
    pub phi: f64,
}

impl Theta {
    pub const DIM: usize = 8;
    pub const NAMES: [&'static str; 8] = ["g_Ca", "g_K", "g_L", "V_Ca", "V_K", "I", "gamma", "phi"];

    pub const G_CA: usize = 0;
    pub const G_K: usize = 1;
    pub const G_L: usize = 2;
    pub const V_CA: usize = 3;
    pub const V_K: usize = 4;
    pub const I_EXT: usize = 5;
    pub const GAMMA: usize = 6;
    pub const PHI: usize = 7;

    pub fn to_array(&self) -> [f64; 8] {
        [self.g_ca, self.g_k, self.g_l, self.v_ca, self.v_k, self.i_ext, self.gamma, self.phi]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        Theta {
            g_ca: a[0],
            g_k: a[1],
            g_l: a[2],
            v_ca: a[3],
            v_k: a[4],
            i_ext: a[5],
            gamma: a[6],
            phi: a[7],
        }
    }
}
