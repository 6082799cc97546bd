//! Sequential Monte Carlo filter for the hidden gating path.
//!
//! The pair `(V, U)` is Markov but `U` alone is not, so the filter works on
//! whole paths `U_{0:i}`: at each step the ancestors are resampled, a new
//! `U_i` is proposed from the transition (or conditional) law, and the weight
//! is the Gaussian density of the observed `V_i`. Paths are stored as
//! per-step ancestor arrays and recovered by tracing back.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::densities::{log_normal, TransitionMoments};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng::{label, StreamSeed};
use crate::simulate::Trajectory;

/// Particles are kept in `[PARTICLE_EPS, 1 - PARTICLE_EPS]` so the channel
/// noise, and hence every transition density, stays nondegenerate.
pub const PARTICLE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proposal {
    /// `q = p(U_i | V_{i-1}, U_{i-1})`; weight `p(V_i | V_{i-1}, U_{i-1}, U_i)`.
    #[default]
    Transition,
    /// `q = p(U_i | V_i, V_{i-1}, U_{i-1})`; weight `p(V_i | V_{i-1}, U_{i-1})`.
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResamplingScheme {
    #[default]
    Multinomial,
    Residual,
    Stratified,
    Systematic,
}

impl FromStr for Proposal {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transition" => Ok(Proposal::Transition),
            "conditional" => Ok(Proposal::Conditional),
            _ => Err(Error::Config(format!("unknown proposal '{s}'"))),
        }
    }
}

impl fmt::Display for Proposal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Proposal::Transition => "transition",
            Proposal::Conditional => "conditional",
        })
    }
}

impl FromStr for ResamplingScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(ResamplingScheme::Multinomial),
            "residual" => Ok(ResamplingScheme::Residual),
            "stratified" => Ok(ResamplingScheme::Stratified),
            "systematic" => Ok(ResamplingScheme::Systematic),
            _ => Err(Error::Config(format!("unknown resampling scheme '{s}'"))),
        }
    }
}

impl fmt::Display for ResamplingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResamplingScheme::Multinomial => "multinomial",
            ResamplingScheme::Residual => "residual",
            ResamplingScheme::Stratified => "stratified",
            ResamplingScheme::Systematic => "systematic",
        })
    }
}

/// Law of `U_0` given `V_0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialPrior {
    #[default]
    Uniform,
    Beta { a: f64, b: f64 },
    Point { u: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub particles: usize,
    pub proposal: Proposal,
    pub scheme: ResamplingScheme,
    pub prior: InitialPrior,
    /// Resample only when ESS < threshold·K. `None` resamples every step.
    pub ess_threshold: Option<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            particles: 100,
            proposal: Proposal::Transition,
            scheme: ResamplingScheme::Multinomial,
            prior: InitialPrior::Uniform,
            ess_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleCloud {
    pub step: usize,
    pub particles: Vec<f64>,
    /// Normalized weights.
    pub weights: Vec<f64>,
    /// Index into the previous cloud of each particle's parent. Identity at
    /// step 0.
    pub ancestors: Vec<usize>,
    /// Log of the incremental normalizing constant `p(V_i | V_{0:i-1})`.
    pub log_increment: f64,
}

impl ParticleCloud {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn mean(&self) -> f64 {
        self.particles.iter().zip(&self.weights).map(|(u, w)| u * w).sum()
    }

    /// Weighted quantile: smallest particle value whose cumulative weight
    /// reaches `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.particles[a].total_cmp(&self.particles[b]));
        let mut acc = 0.0;
        for &i in &idx {
            acc += self.weights[i];
            if acc >= q {
                return self.particles[i];
            }
        }
        self.particles[*idx.last().expect("empty cloud")]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub t: f64,
    pub mean_u: f64,
    pub lo95: f64,
    pub hi95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutput {
    pub t0: f64,
    pub dt: f64,
    pub clouds: Vec<ParticleCloud>,
    /// Log-likelihood estimate `log p(V_{1:n} | V_0)`.
    pub log_likelihood: f64,
}

impl FilterOutput {
    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn last(&self) -> &ParticleCloud {
        self.clouds.last().expect("filter output holds at least one cloud")
    }

    /// Filtered mean and central 95% interval at every step.
    pub fn summaries(&self) -> Vec<StepSummary> {
        self.clouds
            .iter()
            .enumerate()
            .map(|(i, c)| StepSummary {
                t: self.t0 + i as f64 * self.dt,
                mean_u: c.mean(),
                lo95: c.quantile(0.025),
                hi95: c.quantile(0.975),
            })
            .collect()
    }
}

#[inline]
fn clamp_interior(u: f64) -> f64 {
    u.clamp(PARTICLE_EPS, 1.0 - PARTICLE_EPS)
}

/// Draw the step-0 cloud. The joint law of `(V_0, U_0)` is unspecified, so
/// the initial weights are uniform.
pub fn init_particles<R: Rng + ?Sized>(_v0: f64, k: usize, prior: InitialPrior, rng: &mut R) -> Result<ParticleCloud> {
    if k == 0 {
        return Err(Error::Config("number of particles must be >= 1".into()));
    }
    let particles: Vec<f64> = match prior {
        InitialPrior::Uniform => (0..k).map(|_| clamp_interior(rng.random::<f64>())).collect(),
        InitialPrior::Beta { a, b } => {
            let beta = Beta::new(a, b).map_err(|e| Error::Config(format!("beta prior: {e}")))?;
            (0..k).map(|_| clamp_interior(beta.sample(rng))).collect()
        }
        InitialPrior::Point { u } => {
            if !(0.0..=1.0).contains(&u) {
                return Err(Error::GatingOutOfRange(u));
            }
            vec![clamp_interior(u); k]
        }
    };
    Ok(ParticleCloud {
        step: 0,
        particles,
        weights: vec![1.0 / k as f64; k],
        ancestors: (0..k).collect(),
        log_increment: 0.0,
    })
}

/// Draw `k` ancestor indices whose marginal selection probability equals the
/// corresponding weight. Weights are renormalized internally.
pub fn resample<R: Rng + ?Sized>(
    weights: &[f64],
    k: usize,
    scheme: ResamplingScheme,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if weights.is_empty() {
        return Err(Error::InvalidWeights("empty weight vector".into()));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidWeights(format!("weight {w} is negative or not finite")));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidWeights("weights sum to zero".into()));
    }
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w / total;
        cdf.push(acc);
    }
    let last = weights.len() - 1;
    let locate = |x: f64| cdf.partition_point(|&c| c <= x).min(last);
    // Walk a sorted sequence of points through the cdf.
    let sweep = |points: &mut dyn Iterator<Item = f64>| {
        let mut out = Vec::with_capacity(k);
        let mut j = 0;
        for x in points {
            while j < last && cdf[j] <= x {
                j += 1;
            }
            out.push(j);
        }
        out
    };
    let kf = k as f64;
    let idx = match scheme {
        ResamplingScheme::Multinomial => (0..k).map(|_| locate(rng.random::<f64>())).collect(),
        ResamplingScheme::Stratified => {
            let pts: Vec<f64> = (0..k).map(|i| (i as f64 + rng.random::<f64>()) / kf).collect();
            sweep(&mut pts.into_iter())
        }
        ResamplingScheme::Systematic => {
            let u0: f64 = rng.random();
            sweep(&mut (0..k).map(|i| (i as f64 + u0) / kf))
        }
        ResamplingScheme::Residual => {
            let mut out = Vec::with_capacity(k);
            let mut residual = Vec::with_capacity(weights.len());
            for (i, w) in weights.iter().enumerate() {
                let expected = kf * w / total;
                let copies = expected.floor();
                out.extend(std::iter::repeat_n(i, copies as usize));
                residual.push(expected - copies);
            }
            let rest = k.saturating_sub(out.len());
            if rest > 0 {
                let extra = resample(&residual, rest, ResamplingScheme::Multinomial, rng)?;
                out.extend(extra);
            }
            out.truncate(k);
            out
        }
    };
    Ok(idx)
}

/// Normalize log-weights with a max shift. Returns the normalized weights and
/// `log Σ exp(lw)`.
fn normalize_log_weights(log_w: &[f64], step: usize) -> Result<(Vec<f64>, f64)> {
    let max = log_w.iter().copied().filter(|x| !x.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::WeightCollapse { step });
    }
    let w: Vec<f64> = log_w
        .iter()
        .map(|&lw| if lw.is_nan() { 0.0 } else { (lw - max).exp() })
        .collect();
    let sum: f64 = w.iter().sum();
    Ok((w.iter().map(|x| x / sum).collect(), max + sum.ln()))
}

/// One filter step from `v_prev` to `v_next`: resample, propose, weight.
#[allow(clippy::too_many_arguments)]
pub fn propagate_and_weight<R: Rng + ?Sized>(
    cloud: &ParticleCloud,
    v_prev: f64,
    v_next: f64,
    p: &ModelParams,
    dt: f64,
    proposal: Proposal,
    scheme: ResamplingScheme,
    ess_threshold: Option<f64>,
    rng: &mut R,
) -> Result<ParticleCloud> {
    let k = cloud.len();
    let step = cloud.step + 1;
    let resampled = match ess_threshold {
        Some(t) => cloud.ess() < t * k as f64,
        None => true,
    };
    let ancestors = if resampled {
        resample(&cloud.weights, k, scheme, rng)?
    } else {
        (0..k).collect()
    };
    let rates = p.rates_at(v_prev);
    let mut particles = Vec::with_capacity(k);
    let mut log_w = Vec::with_capacity(k);
    for &a in &ancestors {
        let m = TransitionMoments::from_rates(&rates, cloud.particles[a], p, dt);
        let z: f64 = rng.sample(StandardNormal);
        let (u, lw) = match proposal {
            Proposal::Transition => {
                let q = m.marginal_u();
                let u = clamp_interior(q.mean + q.var.max(0.0).sqrt() * z);
                let g = m.cond_v_given_u(u);
                if !(g.var > 0.0) {
                    return Err(Error::DegenerateTransition(format!("step {step}: V variance {}", g.var)));
                }
                (u, log_normal(v_next, g.mean, g.var))
            }
            Proposal::Conditional => {
                let q = m.cond_u_given_v(v_next);
                if !(q.var > 0.0) {
                    return Err(Error::DegenerateTransition(format!("step {step}: U variance {}", q.var)));
                }
                let u = clamp_interior(q.mean + q.var.sqrt() * z);
                (u, log_normal(v_next, m.mean_v, m.var_v))
            }
        };
        particles.push(u);
        log_w.push(if resampled { lw } else { lw + cloud.weights[a].ln() });
    }
    let (weights, log_sum) = normalize_log_weights(&log_w, step)?;
    let log_increment = if resampled { log_sum - (k as f64).ln() } else { log_sum };
    Ok(ParticleCloud { step, particles, weights, ancestors, log_increment })
}

/// Substream used for filter step `i` (step 0 is initialization).
pub fn step_seed(seed: StreamSeed, i: usize) -> StreamSeed {
    seed.child(label::FILTER).child(i as u64)
}

/// Run the filter over an observed V path.
pub fn filter(obs: &Trajectory, p: &ModelParams, cfg: &FilterConfig, seed: StreamSeed) -> Result<FilterOutput> {
    if obs.len() < 2 {
        return Err(Error::Config("filtering needs at least two observations".into()));
    }
    p.validate_dynamics()?;
    let mut clouds = Vec::with_capacity(obs.len());
    let first = init_particles(obs.v[0], cfg.particles, cfg.prior, &mut step_seed(seed, 0).rng())?;
    clouds.push(first);
    let mut log_likelihood = 0.0;
    for i in 1..obs.len() {
        let mut rng = step_seed(seed, i).rng();
        let next = propagate_and_weight(
            &clouds[i - 1],
            obs.v[i - 1],
            obs.v[i],
            p,
            obs.dt,
            cfg.proposal,
            cfg.scheme,
            cfg.ess_threshold,
            &mut rng,
        )?;
        log_likelihood += next.log_increment;
        clouds.push(next);
    }
    Ok(FilterOutput { t0: obs.t0, dt: obs.dt, clouds, log_likelihood })
}

/// Draw one path `U_{0:n}` from the particle approximation of the smoothing
/// distribution: pick a final particle by weight and trace its ancestry.
pub fn sample_smoothing_path<R: Rng + ?Sized>(out: &FilterOutput, rng: &mut R) -> Vec<f64> {
    let last = out.last();
    let mut k = resample(&last.weights, 1, ResamplingScheme::Multinomial, rng)
        .expect("filter weights are normalized")[0];
    let mut path = vec![0.0; out.len()];
    for (i, cloud) in out.clouds.iter().enumerate().rev() {
        path[i] = cloud.particles[k];
        k = cloud.ancestors[k];
    }
    path
}

/// `Σ_k f(U_n^(k)) W_n^(k)` at the final step.
pub fn estimate_expectation<F: Fn(f64) -> f64>(out: &FilterOutput, f: F) -> f64 {
    let last = out.last();
    last.particles.iter().zip(&last.weights).map(|(&u, &w)| f(u) * w).sum()
}
