//! The SAEM-SMC iteration.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::fisher::{standard_errors, FisherState};
use super::mstep::{gradient, hessian, m_step};
use super::schedule::{ParticleSchedule, StepSchedule};
use super::stats::{compute_stats, sa_update, SufficientStats};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Theta};
use crate::rng::{label, StreamSeed};
use crate::simulate::Trajectory;
use crate::smc::{filter, sample_smoothing_path, FilterConfig};

/// Shortest observed path a fit accepts.
pub const MIN_OBSERVATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaemConfig {
    pub iterations: usize,
    pub step: StepSchedule,
    pub particles: ParticleSchedule,
    /// Proposal, resampler and prior; the particle count is overridden by
    /// `particles` at every iteration.
    pub filter: FilterConfig,
    /// Fixed constants (C, V_L, σ, ρ, V1–V4). Its θ part is the centre of the
    /// randomized start when `theta0` is `None`.
    pub fixed: ModelParams,
    pub theta0: Option<Theta>,
    pub seed: u64,
    pub gamma_min: f64,
    /// Abort once more than this fraction of `iterations` has failed.
    pub max_failure_fraction: f64,
}

impl Default for SaemConfig {
    fn default() -> Self {
        SaemConfig {
            iterations: 200,
            step: StepSchedule::default(),
            particles: ParticleSchedule::default(),
            filter: FilterConfig::default(),
            fixed: ModelParams::default(),
            theta0: None,
            seed: 0,
            gamma_min: 1e-3,
            max_failure_fraction: 0.2,
        }
    }
}

impl SaemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iteration count must be ≥ 1".into()));
        }
        self.step.validate()?;
        self.particles.validate()?;
        self.fixed.validate_dynamics()?;
        if !(self.gamma_min > 0.0) {
            return Err(Error::Config(format!("gamma_min must be > 0, got {}", self.gamma_min)));
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return Err(Error::Config("max_failure_fraction must lie in [0, 1]".into()));
        }
        if let Some(t) = &self.theta0 {
            self.fixed.with_theta(t).validate()?;
        }
        Ok(())
    }
}

/// Start drawn as `θ + 0.1 + (θ/3)·N(0,1)` componentwise, redrawn until it
/// gives a valid parameter set with positive conductances.
pub fn randomized_start<R: Rng + ?Sized>(center: &ModelParams, rng: &mut R) -> Theta {
    let c = center.theta().to_array();
    loop {
        let mut x = [0.0; 8];
        for (xi, ci) in x.iter_mut().zip(c) {
            let z: f64 = rng.sample(StandardNormal);
            *xi = ci + 0.1 + ci / 3.0 * z;
        }
        let t = Theta::from_array(x);
        if t.g_l > 0.0 && t.g_ca > 0.0 && t.g_k > 0.0 && center.with_theta(&t).validate().is_ok() {
            return t;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub m: usize,
    pub step: f64,
    pub particles: usize,
    pub theta: Theta,
    /// Filter estimate of `log p(V_{1:n} | V_0)` at the previous estimate.
    pub log_likelihood: Option<f64>,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub failures: usize,
    pub weight_collapses: usize,
    pub gamma_floored: usize,
    pub phi_linear_fallback: usize,
    pub last_error: Option<String>,
    pub final_stats: Option<SufficientStats>,
    /// Row-major `F_m` at the last iteration.
    pub fisher: Vec<Vec<f64>>,
    pub se_pseudo_inverse: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub seed: u64,
    pub config: SaemConfig,
    pub theta0: Theta,
    pub theta_hat: Theta,
    pub standard_errors: Theta,
    pub iterations: Vec<IterationRecord>,
    pub diagnostics: Diagnostics,
}

impl EstimateReport {
    pub fn params(&self) -> ModelParams {
        self.config.fixed.with_theta(&self.theta_hat)
    }
}

struct Iterate {
    stats: SufficientStats,
    theta: Theta,
    loglik: f64,
    draw_stats: SufficientStats,
    gamma_floored: bool,
    phi_fallback: bool,
}

fn one_iteration(
    obs: &Trajectory,
    cfg: &SaemConfig,
    theta: &Theta,
    prev: &SufficientStats,
    a: f64,
    k: usize,
    seed: StreamSeed,
) -> Result<Iterate> {
    let params = cfg.fixed.with_theta(theta);
    let fcfg = FilterConfig { particles: k, ..cfg.filter };
    let out = filter(obs, &params, &fcfg, seed.child(label::FILTER))?;
    let u = sample_smoothing_path(&out, &mut seed.child(label::SMOOTH).rng());
    let draw_stats = compute_stats(&obs.v, &u, obs.dt, &cfg.fixed)?;
    let stats = sa_update(prev, &draw_stats, a);
    let ms = m_step(&stats, &cfg.fixed, cfg.gamma_min)?;
    let next = ms.params.theta();
    ms.params.validate_dynamics()?;
    Ok(Iterate {
        stats,
        theta: next,
        loglik: out.log_likelihood,
        draw_stats,
        gamma_floored: ms.gamma_floored,
        phi_fallback: ms.phi_linear_fallback,
    })
}

/// Fit θ to an observed V path.
pub fn saem_fit(obs: &Trajectory, cfg: &SaemConfig) -> Result<EstimateReport> {
    cfg.validate()?;
    if obs.len() < MIN_OBSERVATIONS {
        return Err(Error::Config(format!(
            "need at least {MIN_OBSERVATIONS} observations, got {}",
            obs.len()
        )));
    }
    let root = StreamSeed::new(cfg.seed);
    let theta0 = match cfg.theta0 {
        Some(t) => t,
        None => randomized_start(&cfg.fixed, &mut root.child(label::INIT).rng()),
    };
    let max_failures = (cfg.max_failure_fraction * cfg.iterations as f64).floor() as usize;
    let mut theta = theta0;
    let mut stats = SufficientStats::zeros(obs.n(), obs.dt);
    let mut any_success = false;
    let mut fisher = FisherState::new(Theta::DIM);
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut diag = Diagnostics {
        failures: 0,
        weight_collapses: 0,
        gamma_floored: 0,
        phi_linear_fallback: 0,
        last_error: None,
        final_stats: None,
        fisher: Vec::new(),
        se_pseudo_inverse: false,
    };

    for m in 1..=cfg.iterations {
        let a = cfg.step.step(m);
        let k = cfg.particles.particles(m);
        let iter_seed = root.child(label::SAEM).child(m as u64);
        // the SA state only starts averaging once it holds a real draw
        let a_eff = if any_success { a } else { 1.0 };
        match one_iteration(obs, cfg, &theta, &stats, a_eff, k, iter_seed) {
            Ok(it) => {
                any_success = true;
                stats = it.stats;
                theta = it.theta;
                diag.gamma_floored += it.gamma_floored as usize;
                diag.phi_linear_fallback += it.phi_fallback as usize;
                let g = gradient(&it.draw_stats, &theta, &cfg.fixed);
                let h = hessian(&it.draw_stats, &theta, &cfg.fixed);
                fisher.update(
                    &DVector::from_column_slice(g.as_slice()),
                    &DMatrix::from_column_slice(8, 8, h.as_slice()),
                    a_eff,
                );
                debug!("iteration {m}: a = {a:.4}, K = {k}, loglik = {:.3}", it.loglik);
                records.push(IterationRecord {
                    m,
                    step: a_eff,
                    particles: k,
                    theta,
                    log_likelihood: Some(it.loglik),
                    failed: false,
                });
            }
            Err(e) => {
                warn!("iteration {m} failed: {e}");
                diag.failures += 1;
                if matches!(e, Error::WeightCollapse { .. }) {
                    diag.weight_collapses += 1;
                }
                diag.last_error = Some(e.to_string());
                if diag.failures > max_failures {
                    return Err(Error::EstimationAborted {
                        failures: diag.failures,
                        iterations: m,
                        last: e.to_string(),
                    });
                }
                records.push(IterationRecord { m, step: a_eff, particles: k, theta, log_likelihood: None, failed: true });
            }
        }
    }
    if !any_success {
        return Err(Error::EstimationAborted {
            failures: diag.failures,
            iterations: cfg.iterations,
            last: diag.last_error.clone().unwrap_or_default(),
        });
    }
    let se = standard_errors(&fisher.f);
    diag.se_pseudo_inverse = se.pseudo_inverse;
    diag.final_stats = Some(stats);
    diag.fisher = (0..Theta::DIM).map(|i| fisher.f.row(i).iter().copied().collect()).collect();
    let se_arr: [f64; 8] = se.se.try_into().expect("eight standard errors");
    Ok(EstimateReport {
        seed: cfg.seed,
        config: *cfg,
        theta0,
        theta_hat: theta,
        standard_errors: Theta::from_array(se_arr),
        iterations: records,
        diagnostics: diag,
    })
}
