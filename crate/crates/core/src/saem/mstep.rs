//! Closed-form maximization of the complete-data criterion and its analytic
//! derivatives.
//!
//! Up to terms free of θ, the Euler complete-data log-likelihood is
//!
//! ```text
//! L(s, θ) = -n ln γ - RSS(ν1)/(2Δγ²)
//!           - (n/2) ln φ - (b/φ + Δ²φ·a)/(2Δσ²)
//! ```
//!
//! where `RSS` is rebuilt from the residual sums and `a`, `b` are the φ sums.

use log::warn;
use nalgebra::{SMatrix, SVector, Vector6};
use serde::{Deserialize, Serialize};

use super::stats::{compute_stats, solve_normal_equations, SufficientStats};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Theta};

pub type ThetaVector = SVector<f64, 8>;
pub type ThetaMatrix = SMatrix<f64, 8, 8>;

/// Result of one M-step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MStep {
    pub params: ModelParams,
    /// `Σ b̃²/c̃ = 0`: φ falls back to the linear root `B/n`.
    pub phi_linear_fallback: bool,
    /// The reconstructed `γ²` was below `gamma_min²` and was floored.
    pub gamma_floored: bool,
}

/// `φ̂`, the positive root of `Aφ² + nφ - B = 0`, in the cancellation-free
/// form `2B / (n + sqrt(n² + 4AB))`. Reduces to `B/n` when `A = 0`.
pub fn phi_root(a: f64, b: f64, n: f64) -> f64 {
    2.0 * b / (n + (n * n + 4.0 * a * b).sqrt())
}

/// Maximize `L(s, ·)` given the fixed constants in `fixed`.
pub fn m_step(s: &SufficientStats, fixed: &ModelParams, gamma_min: f64) -> Result<MStep> {
    let n = s.n as f64;
    let dt = s.dt;
    let coef = solve_normal_equations(&s.gram(), &s.xt_dv())?;
    let nu = coef * (fixed.c / dt);
    let (g_l, g_ca, g_k) = (nu[0], nu[1], nu[2]);
    let scale = nu.amax().max(1.0);
    if g_k.abs() <= 1e-12 * scale {
        return Err(Error::RatioUndefined("V_K = ν₄/g_K with g_K ≈ 0"));
    }
    if g_ca.abs() <= 1e-12 * scale {
        return Err(Error::RatioUndefined("V_Ca = ν₆/g_Ca with g_Ca ≈ 0"));
    }
    let rss = s.residual_sum_of_squares(&coef);
    let mut gamma2 = rss / (n * dt);
    let gamma_floored = !(gamma2 >= gamma_min * gamma_min);
    if gamma_floored {
        warn!("reconstructed gamma² = {gamma2:e} floored at {:e}", gamma_min * gamma_min);
        gamma2 = gamma_min * gamma_min;
    }
    let sig2 = fixed.sigma * fixed.sigma;
    let a = dt / sig2 * s.phi.a;
    let b = s.phi.b / (dt * sig2);
    if !(b > 0.0) {
        return Err(Error::RatioUndefined("phi: gating path has no increments"));
    }
    let phi_linear_fallback = a == 0.0;
    if phi_linear_fallback {
        warn!("phi drift sum vanishes; using the linear root B/n");
    }
    let theta = Theta {
        g_ca,
        g_k,
        g_l,
        v_ca: nu[5] / g_ca,
        v_k: nu[3] / g_k,
        i_ext: nu[4] - g_l * fixed.v_l,
        gamma: gamma2.sqrt(),
        phi: phi_root(a, b, n),
    };
    Ok(MStep { params: fixed.with_theta(&theta), phi_linear_fallback, gamma_floored })
}

/// Pseudo maximum likelihood estimate when both coordinates are observed.
pub fn complete_data_mle(v: &[f64], u: &[f64], dt: f64, fixed: &ModelParams) -> Result<ModelParams> {
    let s = compute_stats(v, u, dt, fixed)?;
    Ok(m_step(&s, fixed, 0.0)?.params)
}

/// `ν1(θ) = (g_L, g_Ca, g_K, g_K·V_K, g_L·V_L + I, g_Ca·V_Ca)`.
pub fn nu1(t: &Theta, v_l: f64) -> Vector6<f64> {
    Vector6::new(t.g_l, t.g_ca, t.g_k, t.g_k * t.v_k, t.g_l * v_l + t.i_ext, t.g_ca * t.v_ca)
}

/// Jacobian `∂ν1/∂θ` restricted to the six drift components of θ.
fn nu1_jacobian(t: &Theta, v_l: f64) -> SMatrix<f64, 6, 8> {
    let mut j = SMatrix::<f64, 6, 8>::zeros();
    j[(0, Theta::G_L)] = 1.0;
    j[(1, Theta::G_CA)] = 1.0;
    j[(2, Theta::G_K)] = 1.0;
    j[(3, Theta::G_K)] = t.v_k;
    j[(3, Theta::V_K)] = t.g_k;
    j[(4, Theta::G_L)] = v_l;
    j[(4, Theta::I_EXT)] = 1.0;
    j[(5, Theta::G_CA)] = t.v_ca;
    j[(5, Theta::V_CA)] = t.g_ca;
    j
}

struct Pieces {
    rss: f64,
    /// ∂RSS/∂ν1
    d_rss: Vector6<f64>,
}

fn pieces(s: &SufficientStats, t: &Theta, fixed: &ModelParams) -> Pieces {
    let coef = nu1(t, fixed.v_l) * (s.dt / fixed.c);
    let g = s.gram();
    let rss = s.residual_sum_of_squares(&coef);
    let d_rss = (g * coef - s.xt_dv()) * (2.0 * s.dt / fixed.c);
    Pieces { rss, d_rss }
}

/// `L(s, θ)` up to θ-free constants.
pub fn complete_loglik(s: &SufficientStats, t: &Theta, fixed: &ModelParams) -> f64 {
    let n = s.n as f64;
    let dt = s.dt;
    let sig2 = fixed.sigma * fixed.sigma;
    let pc = pieces(s, t, fixed);
    -n * t.gamma.ln() - pc.rss / (2.0 * dt * t.gamma * t.gamma) - 0.5 * n * t.phi.ln()
        - (s.phi.b / t.phi + dt * dt * t.phi * s.phi.a) / (2.0 * dt * sig2)
}

/// `∂_θ L(s, θ)`.
pub fn gradient(s: &SufficientStats, t: &Theta, fixed: &ModelParams) -> ThetaVector {
    let n = s.n as f64;
    let dt = s.dt;
    let sig2 = fixed.sigma * fixed.sigma;
    let g2 = t.gamma * t.gamma;
    let pc = pieces(s, t, fixed);
    let j = nu1_jacobian(t, fixed.v_l);
    let mut grad: ThetaVector = -(j.transpose() * pc.d_rss) / (2.0 * dt * g2);
    grad[Theta::GAMMA] = -n / t.gamma + pc.rss / (dt * g2 * t.gamma);
    grad[Theta::PHI] = -0.5 * n / t.phi + s.phi.b / (2.0 * dt * sig2 * t.phi * t.phi) - dt * s.phi.a / (2.0 * sig2);
    grad
}

/// `∂²_θ L(s, θ)`.
pub fn hessian(s: &SufficientStats, t: &Theta, fixed: &ModelParams) -> ThetaMatrix {
    let n = s.n as f64;
    let dt = s.dt;
    let sig2 = fixed.sigma * fixed.sigma;
    let g2 = t.gamma * t.gamma;
    let pc = pieces(s, t, fixed);
    let j = nu1_jacobian(t, fixed.v_l);
    let h_nu = s.gram() * (2.0 * dt * dt / (fixed.c * fixed.c));
    let mut h_rss: ThetaMatrix = j.transpose() * h_nu * j;
    h_rss = (h_rss + h_rss.transpose()) * 0.5;
    // bilinear components of ν1: g_K·V_K and g_Ca·V_Ca
    h_rss[(Theta::G_K, Theta::V_K)] += pc.d_rss[3];
    h_rss[(Theta::V_K, Theta::G_K)] += pc.d_rss[3];
    h_rss[(Theta::G_CA, Theta::V_CA)] += pc.d_rss[5];
    h_rss[(Theta::V_CA, Theta::G_CA)] += pc.d_rss[5];
    let mut h: ThetaMatrix = -h_rss / (2.0 * dt * g2);
    let d_rss_theta = j.transpose() * pc.d_rss;
    for k in 0..6 {
        let x = d_rss_theta[k] / (dt * g2 * t.gamma);
        h[(Theta::GAMMA, k)] = x;
        h[(k, Theta::GAMMA)] = x;
    }
    h[(Theta::GAMMA, Theta::GAMMA)] = n / g2 - 3.0 * pc.rss / (dt * g2 * g2);
    h[(Theta::PHI, Theta::PHI)] = 0.5 * n / (t.phi * t.phi) - s.phi.b / (dt * sig2 * t.phi.powi(3));
    h
}
