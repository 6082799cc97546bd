//! Monte Carlo studies built from the simulator, filter and estimators.

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, Theta};
use crate::rng::{label, StreamSeed};
use crate::saem::{complete_data_mle, saem_fit, SaemConfig};
use crate::simulate::{SimulationSetup, Trajectory};
use crate::smc::{estimate_expectation, filter, FilterConfig};

/// Fraction of time points at which the filtered 95% band contains the true
/// hidden value.
pub fn filter_coverage(traj: &Trajectory, p: &ModelParams, cfg: &FilterConfig, seed: StreamSeed) -> Result<f64> {
    let u = traj.u.as_ref().ok_or_else(|| Error::Config("coverage needs the hidden path".into()))?;
    let out = filter(&traj.without_u(), p, cfg, seed)?;
    let hits = out
        .summaries()
        .iter()
        .zip(u)
        .filter(|(s, &u)| s.lo95 <= u && u <= s.hi95)
        .count();
    Ok(hits as f64 / u.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub particles: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecay {
    pub rows: Vec<VarianceRow>,
    /// Least-squares slope of `ln sd` against `ln K`.
    pub slope: f64,
}

/// Spread of the filter estimate of `E[U_n | V_{0:n}]` over repeated runs on
/// the same observations, for each particle count.
pub fn variance_decay(
    obs: &Trajectory,
    p: &ModelParams,
    base: &FilterConfig,
    particles: &[usize],
    repetitions: usize,
    seed: StreamSeed,
) -> Result<VarianceDecay> {
    if repetitions < 2 || particles.len() < 2 {
        return Err(Error::Config("need ≥ 2 repetitions and ≥ 2 particle counts".into()));
    }
    let obs = obs.without_u();
    let mut rows = Vec::with_capacity(particles.len());
    for &k in particles {
        let cfg = FilterConfig { particles: k, ..*base };
        let est = (0..repetitions)
            .into_par_iter()
            .map(|r| {
                let s = seed.child(k as u64).child(label::REPLICATE).child(r as u64);
                filter(&obs, p, &cfg, s).map(|out| estimate_expectation(&out, |u| u))
            })
            .collect::<Result<Vec<f64>>>()?;
        let (mean, sd) = mean_sd(&est);
        rows.push(VarianceRow { particles: k, mean, sd });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.particles as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.sd.ln()).collect();
    Ok(VarianceDecay { slope: ls_slope(&xs, &ys), rows })
}

/// Sample mean and standard deviation (n − 1 denominator).
pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Per-parameter replicate mean and root-mean-square deviation from the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: Theta,
    pub rmse: Theta,
}

pub fn aggregate(estimates: &[Theta], truth: &Theta) -> Aggregate {
    let n = estimates.len() as f64;
    let t = truth.to_array();
    let mut mean = [0.0; 8];
    let mut mse = [0.0; 8];
    for e in estimates {
        for (j, x) in e.to_array().into_iter().enumerate() {
            mean[j] += x / n;
            mse[j] += (x - t[j]).powi(2) / n;
        }
    }
    Aggregate { count: estimates.len(), mean: Theta::from_array(mean), rmse: Theta::from_array(mse.map(f64::sqrt)) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateConfig {
    pub replicates: usize,
    pub truth: ModelParams,
    pub setup: SimulationSetup,
    /// Template for the SAEM fits; its seed is replaced per replicate.
    pub saem: SaemConfig,
    /// Skip SAEM and run only the complete-data estimator.
    pub complete_only: bool,
    pub seed: u64,
    /// Worker threads; `0` uses the available parallelism.
    pub jobs: usize,
    /// Abort when more than this fraction of replicates fails.
    pub max_failure_fraction: f64,
}

impl Default for ReplicateConfig {
    fn default() -> Self {
        ReplicateConfig {
            replicates: 100,
            truth: ModelParams::default(),
            setup: SimulationSetup::default(),
            saem: SaemConfig::default(),
            complete_only: false,
            seed: 0,
            jobs: 0,
            max_failure_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub complete_data: Option<Theta>,
    pub saem: Option<Theta>,
    pub saem_se: Option<Theta>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateStudy {
    pub truth: Theta,
    pub results: Vec<ReplicateResult>,
    pub complete_data: Aggregate,
    pub saem: Option<Aggregate>,
    pub failures: usize,
}

fn run_replicate(cfg: &ReplicateConfig, r: usize) -> ReplicateResult {
    let seed = StreamSeed::new(cfg.seed).child(label::REPLICATE).child(r as u64);
    let mut res = ReplicateResult {
        replicate: r,
        seed: seed.raw(),
        complete_data: None,
        saem: None,
        saem_se: None,
        error: None,
    };
    let run = |res: &mut ReplicateResult| -> Result<()> {
        let traj = cfg.setup.run(&cfg.truth, seed)?;
        let u = traj.u.as_deref().expect("simulated paths carry U");
        res.complete_data = Some(complete_data_mle(&traj.v, u, traj.dt, &cfg.truth)?.theta());
        if !cfg.complete_only {
            let sc = SaemConfig { seed: seed.child(label::SAEM).raw(), fixed: cfg.truth, ..cfg.saem };
            let rep = saem_fit(&traj.without_u(), &sc)?;
            res.saem = Some(rep.theta_hat);
            res.saem_se = Some(rep.standard_errors);
        }
        Ok(())
    };
    if let Err(e) = run(&mut res) {
        warn!("replicate {r} failed: {e}");
        res.error = Some(e.to_string());
    }
    res
}

/// Simulate `replicates` datasets and fit each, in parallel.
pub fn replicate_study(cfg: &ReplicateConfig) -> Result<ReplicateStudy> {
    if cfg.replicates < 2 {
        return Err(Error::Config("replicate count must be ≥ 2".into()));
    }
    cfg.truth.validate()?;
    if !cfg.complete_only {
        cfg.saem.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<ReplicateResult> =
        pool.install(|| (0..cfg.replicates).into_par_iter().map(|r| run_replicate(cfg, r)).collect());
    let failures = results.iter().filter(|r| r.error.is_some()).count();
    info!("{} replicates, {failures} failed", cfg.replicates);
    if failures as f64 > cfg.max_failure_fraction * cfg.replicates as f64 {
        let last = results.iter().rev().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::EstimationAborted { failures, iterations: cfg.replicates, last });
    }
    let truth = cfg.truth.theta();
    let cd: Vec<Theta> = results.iter().filter_map(|r| r.complete_data).collect();
    let saem: Vec<Theta> = results.iter().filter_map(|r| r.saem).collect();
    Ok(ReplicateStudy {
        truth,
        complete_data: aggregate(&cd, &truth),
        saem: (!cfg.complete_only).then(|| aggregate(&saem, &truth)),
        results,
        failures,
    })
}
