//! Monte-Carlo check that the posterior bound lower-bounds the mean squared
//! error of a MAP angle estimator on simulated echoes.
//!
//! The estimator profiles the reflection gain out by least squares for each
//! candidate angle and maximizes the penalized log-likelihood on a uniform
//! grid over `[-pi/2, pi/2]`, followed by one parabolic refinement. It is a
//! practical validator and makes no claim of efficiency.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;

use crate::array::steering;
use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};
use crate::metrics::{pcrb_exact, transmit_covariance, HybridBeamformer, Scenario};
use crate::prior::GaussianMixturePrior;
use crate::random::{cn01, random_cmat, rng};
use crate::tradeoff::baseband_factor;

/// Default number of grid points for [`map_estimate`].
pub const DEFAULT_GRID: usize = 4096;

/// One block of `L` symbol intervals.
#[derive(Debug, Clone)]
pub struct EchoBatch {
    /// Received echoes, `N_R x L`.
    pub y: CMat,
    /// Transmitted signal `F_RF F_BB S`, `N_T x L`.
    pub x: CMat,
    /// Symbols, `N_S x L`, with `S S^H = L I`.
    pub s: CMat,
    /// Per-entry noise variance used to draw `y`.
    pub sigma_s2: f64,
}

/// Symbols with `(1/L) S S^H = I`: scaled orthonormal rows of a random
/// Gaussian draw.
fn orthonormal_symbols(n_s: usize, symbols: usize, seed: u64) -> CMat {
    let mut g = rng(seed);
    let draw = random_cmat(&mut g, symbols, n_s);
    let q = draw.qr().q();
    q.adjoint().map(|z| z * (symbols as f64).sqrt())
}

/// Simulates `Y = alpha b(theta) a^H(theta) X + N` with i.i.d. `CN(0, sigma_s2)`
/// noise. Requires `symbols >= N_S`, where `N_S` is the number of baseband
/// streams of `b`.
pub fn simulate_echo(
    theta: f64,
    alpha: C64,
    b: &HybridBeamformer,
    n_r: usize,
    symbols: usize,
    sigma_s2: f64,
    seed: u64,
) -> Result<EchoBatch> {
    let f_bb = b.f_bb.clone().unwrap_or_else(|| baseband_factor(&b.r_bb));
    let n_s = f_bb.ncols();
    if symbols < n_s {
        return Err(Error::Dimension(format!("need at least {n_s} symbols, got {symbols}")));
    }
    if !(sigma_s2 >= 0.0) || n_r == 0 {
        return Err(Error::Dimension("noise variance must be nonnegative and N_R positive".into()));
    }
    let s = orthonormal_symbols(n_s, symbols, seed);
    let x = &b.f_rf * (&f_bb * &s);
    let a = steering(theta, b.n_t());
    let rx = steering(theta, n_r);
    // a^H X as a row, then the rank-one echo.
    let ax = a.adjoint() * &x;
    let mut y = (&rx * ax).map(|z| z * alpha);
    let mut g = rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    let sd = sigma_s2.sqrt();
    for v in y.iter_mut() {
        *v += cn01(&mut g) * sd;
    }
    Ok(EchoBatch { y, x, s, sigma_s2 })
}

/// MAP angle estimate with the gain profiled out.
///
/// For a candidate `theta` with `u = a^H X`, the profiled residual is
/// `||Y||^2 - |b^H Y u^H|^2 / (N_R ||u||^2)`, so only the second term and the
/// log prior are scored. Zero transmitted energy leaves the prior alone.
pub fn map_estimate(batch: &EchoBatch, prior: &GaussianMixturePrior, grid: usize) -> f64 {
    let grid = grid.max(3);
    let n_r = batch.y.nrows();
    let n_t = batch.x.nrows();
    let z = &batch.y * batch.x.adjoint();
    let gram = &batch.x * batch.x.adjoint();
    let inv_noise = if batch.sigma_s2 > 0.0 { 1.0 / batch.sigma_s2 } else { 0.0 };
    let noiseless = batch.sigma_s2 == 0.0;
    let step = PI / (grid - 1) as f64;
    let score = |theta: f64| -> f64 {
        let a = steering(theta, n_t);
        let b = steering(theta, n_r);
        let energy = a.dotc(&(&gram * &a)).re;
        let fit = if energy > 1e-300 {
            let corr = b.dotc(&(&z * &a));
            corr.norm_sqr() / (n_r as f64 * energy)
        } else {
            0.0
        };
        let pdf = prior.pdf(theta);
        let ln_p = if pdf > 0.0 { pdf.ln() } else { f64::NEG_INFINITY };
        if noiseless {
            // The likelihood dominates any finite prior term.
            if energy > 1e-300 {
                fit
            } else {
                ln_p
            }
        } else {
            fit * inv_noise + ln_p
        }
    };
    let scores: Vec<f64> = (0..grid).map(|i| score(-FRAC_PI_2 + step * i as f64)).collect();
    let (best, _) = scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let theta0 = -FRAC_PI_2 + step * best as f64;
    if best == 0 || best + 1 == grid {
        return theta0;
    }
    let (l, m, r) = (scores[best - 1], scores[best], scores[best + 1]);
    let curv = l - 2.0 * m + r;
    if !(l.is_finite() && r.is_finite()) || curv >= 0.0 {
        return theta0;
    }
    let shift = (0.5 * (l - r) / curv).clamp(-0.5, 0.5);
    theta0 + shift * step
}

/// Monte-Carlo summary for one beamformer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSummary {
    pub mse: f64,
    pub pcrb_exact: f64,
    pub trials: usize,
    /// Standard error of the squared-error mean.
    pub std_err: f64,
    /// Mean signed error, radians.
    pub bias: f64,
    /// Standard error of the signed-error mean.
    pub bias_std_err: f64,
}

/// Per-trial seed, decorrelated from neighbouring trial indices.
fn trial_seed(seed: u64, trial: usize) -> u64 {
    let mut z = seed.wrapping_add((trial as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Signed errors `theta_hat - theta` for `trials` independent draws, in trial
/// order. Angles are drawn from the prior restricted to `[-pi/2, pi/2]`.
pub fn trial_errors(scenario: &Scenario, b: &HybridBeamformer, trials: usize, seed: u64, grid: usize) -> Result<Vec<f64>> {
    if b.n_t() != scenario.array.n_t {
        return Err(Error::Dimension(format!("beamformer has {} rows, array has {}", b.n_t(), scenario.array.n_t)));
    }
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let ts = trial_seed(seed, t);
            let mut g = rng(ts);
            let theta = loop {
                let th = scenario.prior.sample_with(&mut g, 1)[0];
                if (-FRAC_PI_2..=FRAC_PI_2).contains(&th) {
                    break th;
                }
            };
            let batch = simulate_echo(
                theta,
                scenario.reflection.alpha,
                b,
                scenario.array.n_r,
                scenario.symbols,
                scenario.sigma_s2,
                ts.wrapping_add(1),
            )?;
            Ok(map_estimate(&batch, &scenario.prior, grid) - theta)
        })
        .collect()
}

/// Empirical MSE of the MAP estimator next to the exact bound for the same
/// transmit covariance. Requires at least 100 trials.
pub fn empirical_mse(scenario: &Scenario, b: &HybridBeamformer, trials: usize, seed: u64) -> Result<McSummary> {
    empirical_mse_with_grid(scenario, b, trials, seed, DEFAULT_GRID)
}

pub fn empirical_mse_with_grid(
    scenario: &Scenario,
    b: &HybridBeamformer,
    trials: usize,
    seed: u64,
    grid: usize,
) -> Result<McSummary> {
    if trials < 100 {
        return Err(Error::Config(format!("at least 100 trials required, got {trials}")));
    }
    let s = scenario.sensing()?;
    let bound = pcrb_exact(&s, &transmit_covariance(b))?;
    let errs = trial_errors(scenario, b, trials, seed, grid)?;
    let n = errs.len() as f64;
    let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
    let mse = sq.iter().sum::<f64>() / n;
    let var_sq = sq.iter().map(|v| (v - mse).powi(2)).sum::<f64>() / (n - 1.0);
    let bias = errs.iter().sum::<f64>() / n;
    let var_e = errs.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(McSummary {
        mse,
        pcrb_exact: bound,
        trials,
        std_err: (var_sq / n).sqrt(),
        bias,
        bias_std_err: (var_e / n).sqrt(),
    })
}

/// Whether `mse >= pcrb (1 - 3 / sqrt(trials))`.
pub fn bound_holds(summary: &McSummary) -> bool {
    summary.mse >= summary.pcrb_exact * (1.0 - 3.0 / (summary.trials as f64).sqrt())
}
