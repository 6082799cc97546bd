//! Stochastic-approximation estimate of the observed Fisher information via
//! the missing-information principle.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Running `G` (score), `H` (second-moment) and `F = H - GG'`.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherState {
    pub g: DVector<f64>,
    pub h: DMatrix<f64>,
    pub f: DMatrix<f64>,
}

impl FisherState {
    pub fn new(dim: usize) -> Self {
        FisherState { g: DVector::zeros(dim), h: DMatrix::zeros(dim, dim), f: DMatrix::zeros(dim, dim) }
    }

    /// One recursion with the complete-data score `grad` and Hessian `hess`
    /// evaluated at the current imputation.
    pub fn update(&mut self, grad: &DVector<f64>, hess: &DMatrix<f64>, a: f64) {
        self.g += (grad - &self.g) * a;
        let target = hess + grad * grad.transpose();
        self.h += (target - &self.h) * a;
        symmetrize(&mut self.h);
        self.f = &self.h - &self.g * self.g.transpose();
        symmetrize(&mut self.f);
        debug_assert!(self.f == self.f.transpose());
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let x = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardErrors {
    pub se: Vec<f64>,
    /// `-F` was not positive definite; a pseudo-inverse over its positive
    /// eigenvalues was used instead.
    pub pseudo_inverse: bool,
}

/// `sqrt(diag((-F)⁻¹))` after symmetrization.
pub fn standard_errors(f: &DMatrix<f64>) -> StandardErrors {
    let mut info = -f.clone();
    symmetrize(&mut info);
    if let Some(chol) = info.clone().cholesky() {
        let inv = chol.inverse();
        return StandardErrors { se: inv.diagonal().iter().map(|x| x.sqrt()).collect(), pseudo_inverse: false };
    }
    warn!("negated Fisher matrix is not positive definite; using a pseudo-inverse");
    let eig = SymmetricEigen::new(info);
    let scale = eig.eigenvalues.amax();
    let n = f.nrows();
    let mut diag = vec![0.0; n];
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > 1e-12 * scale {
            for (i, d) in diag.iter_mut().enumerate() {
                *d += eig.eigenvectors[(i, k)].powi(2) / lam;
            }
        }
    }
    StandardErrors { se: diag.into_iter().map(f64::sqrt).collect(), pseudo_inverse: true }
}
