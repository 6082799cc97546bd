#![allow(dead_code)]

use ml_saem::rng::StreamSeed;
use ml_saem::densities::{log_marginal_u, TransitionInput};
use ml_saem::simulate::euler_scalar_terminal;
use ml_saem::{ModelParams, State};
use rand_distr::{Distribution, StandardNormal};

/// Asymptotic Kolmogorov p-value for the one-sample statistic `d` at size `n`.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// Largest gap between the empirical CDF of `xs` and `cdf`.
pub fn ks_statistic(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Maximize a unimodal `f` on `[lo, hi]` by golden-section search.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, rel_tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while (hi - lo) > rel_tol * (lo.abs() + hi.abs()) * 0.5 {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        }
    }
    0.5 * (lo + hi)
}

/// Log-likelihood of a gating path `u` given `v`, summed transition by
/// transition from the Gaussian U-marginal, as a function of φ.
pub fn gating_loglik(v: &[f64], u: &[f64], dt: f64, fixed: &ModelParams, phi: f64) -> f64 {
    let p = ModelParams { phi, ..*fixed };
    (0..v.len() - 1)
        .map(|i| {
            let inp = TransitionInput {
                prev: State::new(v[i], u[i]),
                next: State::new(v[i + 1], u[i + 1]),
                params: &p,
                dt,
            };
            log_marginal_u(&inp).expect("interior gating path")
        })
        .sum()
}

/// Mean absolute terminal error of Euler against the exact OU solution
/// `dX = -θX dt + s dB`, for each coarse step in `deltas` (multiples of
/// `fine`). Returns the log-log slope of error against step.
pub fn ou_strong_error_slope(theta: f64, s: f64, horizon: f64, fine: f64, deltas: &[f64], paths: usize, seed: u64) -> (Vec<f64>, f64) {
    let steps = (horizon / fine).round() as usize;
    let decay = (-theta * fine).exp();
    let var_i = (1.0 - (-2.0 * theta * fine).exp()) / (2.0 * theta);
    let cov = (1.0 - decay) / theta;
    // (ΔB, I) jointly normal: ΔB = √h z1, I = c z1 + d z2
    let c = cov / fine.sqrt();
    let d = (var_i - c * c).max(0.0).sqrt();
    let mut rng = StreamSeed::new(seed).rng();
    let mut err = vec![0.0; deltas.len()];
    let mut db = vec![0.0; steps];
    for _ in 0..paths {
        let mut exact = 1.0;
        for slot in db.iter_mut() {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            *slot = fine.sqrt() * z1;
            exact = decay * exact + s * (c * z1 + d * z2);
        }
        for (e, &delta) in err.iter_mut().zip(deltas) {
            let group = (delta / fine).round() as usize;
            let coarse: Vec<f64> = db.chunks(group).map(|ch| ch.iter().sum()).collect();
            let x = euler_scalar_terminal(1.0, delta, &coarse, |x| -theta * x, |_| s);
            *e += (x - exact).abs() / paths as f64;
        }
    }
    let lx: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
    let ly: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    (err, ml_saem::experiments::ls_slope(&lx, &ly))
}
