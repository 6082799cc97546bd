//! Complete-data sufficient statistics.
//!
//! With the scaling constants `V1..V4` fixed, the Euler drift of V is linear
//! in `ν1 = (g_L, g_Ca, g_K, g_K·V_K, g_L·V_L + I, g_Ca·V_Ca)`:
//! `f = X·ν1 / C` with design row `X_i = (-V, -m∞(V)V, -UV, U, 1, m∞(V))`.
//! The statistics kept here are the Gram matrix `X'X`, the cross products
//! `X'ΔV`, `ΣΔV²` and two φ-free sums over the gating increments.

use nalgebra::{Matrix6, SymmetricEigen, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_gating, ModelParams};

/// Threshold on the smallest-to-largest eigenvalue ratio of the column-scaled
/// Gram matrix.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Sums that reconstruct `Σ(ΔV_i - Δf_i)²` for any `ν1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VResidSums {
    /// `Σ ΔV²`
    pub dv_sq: f64,
    /// `X'ΔV`
    pub xt_dv: [f64; 6],
    /// `X'X`
    pub gram: [[f64; 6]; 6],
}

/// Sums entering the φ update. With `b = φ·b̃` and `σ(V,U)² = σ²φ·c̃`:
/// `a = Σ b̃²/c̃` and `b = Σ (ΔU)²/c̃`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiSums {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    /// Regression coefficients `(X'X)⁻¹X'ΔV`, one per `ν1` component.
    pub s1: [f64; 6],
    pub v_resid: VResidSums,
    pub phi: PhiSums,
    pub n: usize,
    pub dt: f64,
}

impl SufficientStats {
    /// The all-zero state the stochastic approximation starts from.
    pub fn zeros(n: usize, dt: f64) -> Self {
        SufficientStats {
            s1: [0.0; 6],
            v_resid: VResidSums { dv_sq: 0.0, xt_dv: [0.0; 6], gram: [[0.0; 6]; 6] },
            phi: PhiSums { a: 0.0, b: 0.0 },
            n,
            dt,
        }
    }

    pub fn gram(&self) -> Matrix6<f64> {
        Matrix6::from_fn(|i, j| self.v_resid.gram[i][j])
    }

    pub fn xt_dv(&self) -> Vector6<f64> {
        Vector6::from_column_slice(&self.v_resid.xt_dv)
    }

    /// The five γ statistics in their usual form:
    /// `ΣΔV·U, ΣU², ΣΔV·V·m∞(V), ΣΔV·U·V, ΣU²V²`.
    pub fn gamma_statistics(&self) -> [f64; 5] {
        let x = &self.v_resid.xt_dv;
        let g = &self.v_resid.gram;
        [x[3], g[3][3], -x[1], -x[2], g[2][2]]
    }

    /// `Σ(ΔV - coef·X)²` for regression coefficients `coef = Δ·ν1/C`.
    pub fn residual_sum_of_squares(&self, coef: &Vector6<f64>) -> f64 {
        let g = self.gram();
        self.v_resid.dv_sq - 2.0 * coef.dot(&self.xt_dv()) + coef.dot(&(g * coef))
    }
}

#[inline]
pub(crate) fn design_row(v: f64, u: f64, m_inf: f64) -> [f64; 6] {
    [-v, -m_inf * v, -u * v, u, 1.0, m_inf]
}

/// Solve `X'X · coef = rhs` after checking the Gram matrix has full rank.
/// Columns are rescaled to unit diagonal first; one step of iterative
/// refinement follows the Cholesky solve.
pub fn solve_normal_equations(gram: &Matrix6<f64>, rhs: &Vector6<f64>) -> Result<Vector6<f64>> {
    let d = Vector6::from_fn(|i, _| {
        let g = gram[(i, i)];
        if g > 0.0 {
            1.0 / g.sqrt()
        } else {
            0.0
        }
    });
    let scaled = Matrix6::from_fn(|i, j| gram[(i, j)] * d[i] * d[j]);
    if !scaled.iter().all(|x| x.is_finite()) {
        return Err(Error::RankDeficient { ratio: f64::NAN });
    }
    let eig = SymmetricEigen::new(scaled);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if !(ratio > RANK_TOLERANCE) {
        return Err(Error::RankDeficient { ratio });
    }
    let chol = scaled.cholesky().ok_or(Error::RankDeficient { ratio })?;
    let srhs = rhs.component_mul(&d);
    let mut y = chol.solve(&srhs);
    let r = srhs - scaled * y;
    y += chol.solve(&r);
    Ok(y.component_mul(&d))
}

/// Statistics of one complete path. `v` and `u` are on the same grid of step
/// `dt`; `u[0..n]` must lie strictly inside `(0, 1)`.
pub fn compute_stats(v: &[f64], u: &[f64], dt: f64, fixed: &ModelParams) -> Result<SufficientStats> {
    if v.len() != u.len() {
        return Err(Error::Config(format!("V has {} points but U has {}", v.len(), u.len())));
    }
    if v.len() < 2 {
        return Err(Error::Config("need at least one transition".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be > 0, got {dt}")));
    }
    let n = v.len() - 1;
    let mut out = SufficientStats::zeros(n, dt);
    let mut gram = [[0.0; 6]; 6];
    for i in 0..n {
        let (vi, ui) = (v[i], check_gating(u[i])?);
        let u_next = check_gating(u[i + 1])?;
        let rates = fixed.rates_at(vi);
        let x = design_row(vi, ui, rates.m_inf);
        let dv = v[i + 1] - vi;
        out.v_resid.dv_sq += dv * dv;
        for a in 0..6 {
            out.v_resid.xt_dv[a] += x[a] * dv;
            for b in a..6 {
                gram[a][b] += x[a] * x[b];
            }
        }
        let c = rates.diffusion_u_sq_unit(ui);
        if !(c > 0.0) {
            return Err(Error::DegenerateTransition(format!(
                "gating value {ui} at index {i} has no channel noise"
            )));
        }
        let b = rates.drift_u_unit(ui);
        let du = u_next - ui;
        out.phi.a += b * b / c;
        out.phi.b += du * du / c;
    }
    for a in 0..6 {
        for b in 0..a {
            gram[a][b] = gram[b][a];
        }
    }
    out.v_resid.gram = gram;
    let coef = solve_normal_equations(&out.gram(), &out.xt_dv())?;
    out.s1.copy_from_slice(coef.as_slice());
    Ok(out)
}

/// Stochastic approximation step `s + a·(s_new - s)`, componentwise.
pub fn sa_update(prev: &SufficientStats, new: &SufficientStats, a: f64) -> SufficientStats {
    let mix = |x: f64, y: f64| x + a * (y - x);
    let mut out = *prev;
    for i in 0..6 {
        out.s1[i] = mix(prev.s1[i], new.s1[i]);
        out.v_resid.xt_dv[i] = mix(prev.v_resid.xt_dv[i], new.v_resid.xt_dv[i]);
        for j in 0..6 {
            out.v_resid.gram[i][j] = mix(prev.v_resid.gram[i][j], new.v_resid.gram[i][j]);
        }
    }
    out.v_resid.dv_sq = mix(prev.v_resid.dv_sq, new.v_resid.dv_sq);
    out.phi.a = mix(prev.phi.a, new.phi.a);
    out.phi.b = mix(prev.phi.b, new.phi.b);
    out.n = new.n;
    out.dt = new.dt;
    out
}
