//! Euler-Maruyama simulation at a fine step with subsampling to the
//! observation grid.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_gating, ModelParams, State};
use crate::rng::{label, StreamSeed};

/// A sampled path on a uniform grid. Observations carry `v` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub v: Vec<f64>,
    pub u: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

impl Trajectory {
    pub fn observations(t0: f64, dt: f64, v: Vec<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::Config("trajectory must hold at least one point".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::Config(format!("time step must be > 0, got {dt}")));
        }
        Ok(Trajectory { t0, dt, v, u: None, seed: None })
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Number of transitions, `len - 1`.
    pub fn n(&self) -> usize {
        self.v.len().saturating_sub(1)
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// The same path with the hidden coordinate dropped.
    pub fn without_u(&self) -> Trajectory {
        Trajectory { u: None, ..self.clone() }
    }
}

/// One Euler-Maruyama step driven by a pair of standard normals
/// `(η̃, η)`; the noise matrix is `[[γ, ρ], [ρ, σ(V,U)]]`. U is clamped back
/// into `[0, 1]` afterwards.
pub fn euler_step(state: State, p: &ModelParams, dt: f64, noise: (f64, f64)) -> Result<State> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be > 0, got {dt}")));
    }
    let u = check_gating(state.u)?;
    Ok(euler_step_unchecked(State::new(state.v, u), p, dt, noise))
}

#[inline]
pub(crate) fn euler_step_unchecked(state: State, p: &ModelParams, dt: f64, noise: (f64, f64)) -> State {
    let r = p.rates_at(state.v);
    let sq = dt.sqrt();
    let s = r.diffusion_u(state.u, p.sigma);
    let v = state.v + dt * r.drift_v(state.u, p) + sq * (p.gamma * noise.0 + p.rho * noise.1);
    let u = state.u + dt * r.drift_u(state.u) + sq * (p.rho * noise.0 + s * noise.1);
    State::new(v, u.clamp(0.0, 1.0))
}

/// Simulate `steps` Euler steps of size `delta` from `(v0, u0)`. The noise is
/// drawn from the `SIMULATE` substream of `seed`.
pub fn simulate_path(
    p: &ModelParams,
    v0: f64,
    u0: f64,
    delta: f64,
    steps: usize,
    seed: StreamSeed,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::Config("steps must be >= 1".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Config(format!("time step must be > 0, got {delta}")));
    }
    let u0 = check_gating(u0)?;
    let mut rng = seed.child(label::SIMULATE).rng();
    let mut v = Vec::with_capacity(steps + 1);
    let mut u = Vec::with_capacity(steps + 1);
    let mut state = State::new(v0, u0);
    v.push(state.v);
    u.push(state.u);
    for _ in 0..steps {
        let noise = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        state = euler_step_unchecked(state, p, delta, noise);
        v.push(state.v);
        u.push(state.u);
    }
    Ok(Trajectory { t0: 0.0, dt: delta, v, u: Some(u), seed: Some(seed.raw()) })
}

/// Keep every `l`-th point starting at index 0. Trailing points past the last
/// full stride are dropped.
pub fn subsample(traj: &Trajectory, l: usize) -> Result<Trajectory> {
    if l == 0 {
        return Err(Error::Config("subsampling factor must be >= 1".into()));
    }
    if l > 1 && traj.len() <= l {
        return Err(Error::Config(format!(
            "trajectory of length {} too short for subsampling factor {l}",
            traj.len()
        )));
    }
    let keep = |xs: &[f64]| xs.iter().step_by(l).copied().collect::<Vec<_>>();
    Ok(Trajectory {
        t0: traj.t0,
        dt: traj.dt * l as f64,
        v: keep(&traj.v),
        u: traj.u.as_deref().map(keep),
        seed: traj.seed,
    })
}

/// Settings for generating an observed dataset: `n` observation intervals of
/// length `l·delta`, simulated at the fine step `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSetup {
    pub v0: f64,
    pub u0: f64,
    pub delta: f64,
    pub subsample: usize,
    pub n: usize,
}

impl Default for SimulationSetup {
    fn default() -> Self {
        SimulationSetup { v0: -26.0, u0: 0.2, delta: 0.01, subsample: 10, n: 2000 }
    }
}

impl SimulationSetup {
    pub fn observation_step(&self) -> f64 {
        self.delta * self.subsample as f64
    }

    /// Simulate and subsample; the returned trajectory still carries U.
    pub fn run(&self, p: &ModelParams, seed: StreamSeed) -> Result<Trajectory> {
        let fine = simulate_path(p, self.v0, self.u0, self.delta, self.n * self.subsample, seed)?;
        subsample(&fine, self.subsample)
    }
}

/// Scalar Euler-Maruyama path driven by given Brownian increments; returns the
/// terminal value.
pub fn euler_scalar_terminal<F, G>(x0: f64, dt: f64, increments: &[f64], drift: F, diffusion: G) -> f64
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    increments.iter().fold(x0, |x, &db| x + drift(x) * dt + diffusion(x) * db)
}
