//! Half-wavelength ULA responses and the prior-averaged sensing matrices.

use std::f64::consts::PI;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, hermitian_defect, lambda_min, phasor, trace_product, CMat, CVec, C64};
use crate::prior::{GaussianMixturePrior, QuadratureRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub n_t: usize,
    pub n_r: usize,
}

impl ArrayConfig {
    pub fn new(n_t: usize, n_r: usize) -> Result<Self> {
        if n_t == 0 || n_r == 0 {
            return Err(Error::Dimension("antenna counts must be at least 1".into()));
        }
        Ok(Self { n_t, n_r })
    }
}

/// Point-target reflection: complex gain plus the quantities needed for the
/// radiated-power scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionModel {
    pub alpha: C64,
    /// Reference channel power at 1 m (linear).
    pub beta0: f64,
    /// BS-target range in meters.
    pub range: f64,
    /// `P |alpha|^2 L / sigma_s^2`, linear.
    pub snr_ratio: f64,
}

impl ReflectionModel {
    /// Derives `|alpha|^2` from the sensing SNR ratio. Only the magnitude of
    /// `alpha` enters any bound, so the phase is set to zero.
    pub fn from_snr_ratio(snr_ratio: f64, power: f64, symbols: usize, sigma_s2: f64, beta0: f64, range: f64) -> Result<Self> {
        if !(snr_ratio > 0.0) || !(power > 0.0) || symbols == 0 || !(sigma_s2 > 0.0) {
            return Err(Error::Config("snr ratio, power, symbol count and noise must be positive".into()));
        }
        let alpha2 = snr_ratio * sigma_s2 / (power * symbols as f64);
        Ok(Self { alpha: c(alpha2.sqrt(), 0.0), beta0, range, snr_ratio })
    }

    pub fn alpha_sq(&self) -> f64 {
        self.alpha.norm_sqr()
    }

    /// Checks that `snr_ratio` agrees with `alpha` for the given power budget.
    pub fn is_consistent(&self, power: f64, symbols: usize, sigma_s2: f64) -> bool {
        let implied = power * self.alpha_sq() * symbols as f64 / sigma_s2;
        (implied - self.snr_ratio).abs() <= 1e-9 * self.snr_ratio.abs().max(1e-300)
    }

    /// Round-trip path gain `beta0 / r^2` used for radiated power patterns.
    pub fn path_gain(&self) -> f64 {
        self.beta0 / (self.range * self.range)
    }
}

#[inline]
fn element_phase_coeff(n: usize, p: usize) -> f64 {
    // p is 0-based here; the 1-based index is p + 1.
    -PI * (n as f64 - 2.0 * (p as f64 + 1.0) + 1.0) / 2.0
}

/// ULA steering vector, element `p` (1-based) `exp(-j pi (N - 2p + 1) sin(theta) / 2)`.
pub fn steering(theta: f64, n: usize) -> CVec {
    let s = theta.sin();
    CVec::from_fn(n, |p, _| phasor(element_phase_coeff(n, p) * s))
}

/// Derivative of [`steering`] with respect to `theta`.
pub fn steering_deriv(theta: f64, n: usize) -> CVec {
    let (s, co) = theta.sin_cos();
    CVec::from_fn(n, |p, _| {
        let k = element_phase_coeff(n, p);
        Complex::new(0.0, k * co) * phasor(k * s)
    })
}

/// `||d b / d theta||^2` for an `n`-element array, in closed form.
pub fn steering_deriv_norm_sq(theta: f64, n: usize) -> f64 {
    let co = theta.cos();
    let sum: f64 = (0..n).map(|p| element_phase_coeff(n, p).powi(2)).sum();
    sum * co * co
}

/// Target response `G = alpha b(theta) a^H(theta)`, `N_R x N_T`.
pub fn target_response(theta: f64, model: &ReflectionModel, cfg: &ArrayConfig) -> CMat {
    let b = steering(theta, cfg.n_r);
    let a = steering(theta, cfg.n_t);
    (b * a.adjoint()).map(|z| z * model.alpha)
}

/// Everything the posterior bound needs apart from the transmit covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrices {
    pub a1: CMat,
    pub a2: CMat,
    pub a3: CMat,
    pub a4: CMat,
    pub prior_fisher: f64,
    /// `sigma_s^2 / (2 |alpha|^2 L)`.
    pub noise_scale: f64,
}

impl SensingMatrices {
    pub fn n_t(&self) -> usize {
        self.a1.nrows()
    }

    /// Same matrices with `A2`, `A3`, `A4` replaced by zero, for which the
    /// exact bound collapses to the upper bound.
    pub fn with_only_a1(&self) -> Self {
        let n = self.n_t();
        Self {
            a1: self.a1.clone(),
            a2: CMat::zeros(n, n),
            a3: CMat::zeros(n, n),
            a4: CMat::zeros(n, n),
            prior_fisher: self.prior_fisher,
            noise_scale: self.noise_scale,
        }
    }

    /// Checks Hermitian/PSD structure of `A1`, `A2`, `A4`.
    pub fn check_structure(&self) -> Result<()> {
        for (name, m) in [("A1", &self.a1), ("A2", &self.a2), ("A4", &self.a4)] {
            let scale = m.norm().max(1.0);
            if hermitian_defect(m) > 1e-12 * scale {
                return Err(Error::Dimension(format!("{name} is not Hermitian")));
            }
            if lambda_min(m) < -1e-10 * scale {
                return Err(Error::Dimension(format!("{name} is not PSD")));
            }
        }
        Ok(())
    }

    /// Cauchy-Schwarz gap `tr(A2 R) tr(A4 R) - |tr(A3 R)|^2`, nonnegative for PSD `R`.
    pub fn cauchy_schwarz_gap(&self, r: &CMat) -> (f64, f64) {
        let t2 = trace_product(&self.a2, r).re;
        let t4 = trace_product(&self.a4, r).re;
        let t3 = trace_product(&self.a3, r);
        (t2 * t4 - t3.norm_sqr(), t2 * t4)
    }
}

/// Assembles `A1..A4` by quadrature against the prior.
pub fn sensing_matrices(
    prior: &GaussianMixturePrior,
    cfg: &ArrayConfig,
    model: &ReflectionModel,
    symbols: usize,
    sigma_s2: f64,
    quad: &QuadratureRule,
) -> Result<SensingMatrices> {
    if !quad.covers_angle_domain() {
        let (lo, hi) = quad.domain();
        return Err(Error::QuadratureDomain { lo, hi });
    }
    if symbols == 0 || !(sigma_s2 > 0.0) || !(model.alpha_sq() > 0.0) {
        return Err(Error::Config("symbols, noise power and |alpha|^2 must be positive".into()));
    }
    let n = cfg.n_t;
    let nr = cfg.n_r as f64;
    let mut a1 = CMat::zeros(n, n);
    let mut a2 = CMat::zeros(n, n);
    let mut a3 = CMat::zeros(n, n);
    let mut a4 = CMat::zeros(n, n);
    let one = C64::new(1.0, 0.0);
    for (theta, w) in quad.iter() {
        let wp = w * prior.pdf(theta);
        if wp == 0.0 {
            continue;
        }
        let a = steering(theta, n);
        let da = steering_deriv(theta, n);
        let bdot = steering_deriv_norm_sq(theta, cfg.n_r);
        a1.gerc(c(wp * bdot, 0.0), &a, &a, one);
        a2.gerc(c(wp * nr, 0.0), &da, &da, one);
        a3.gerc(c(wp * nr, 0.0), &da, &a, one);
        a4.gerc(c(wp * nr, 0.0), &a, &a, one);
    }
    Ok(SensingMatrices {
        a1,
        a2,
        a3,
        a4,
        prior_fisher: prior.fisher_info(quad),
        noise_scale: sigma_s2 / (2.0 * model.alpha_sq() * symbols as f64),
    })
}
