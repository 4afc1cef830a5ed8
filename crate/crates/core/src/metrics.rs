//! Performance functionals: transmit covariance, posterior bound (exact and
//! upper), achievable rate and radiated power pattern. Also home of the
//! [`HybridBeamformer`] and [`Scenario`] types.

use std::f64::consts::LN_2;

use crate::array::{sensing_matrices, steering, ArrayConfig, ReflectionModel, SensingMatrices};
use crate::channel::{rician_channel, ChannelParams};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_defect, identity, lambda_min, logdet_hpd, trace_product, CMat, C64};
use crate::prior::{GaussianMixturePrior, QuadratureRule};

/// Analog/digital precoder pair. `r_bb` is always present; `f_bb` is kept
/// when a stream factorization is known.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridBeamformer {
    pub f_rf: CMat,
    pub f_bb: Option<CMat>,
    pub r_bb: CMat,
}

impl HybridBeamformer {
    pub fn from_factors(f_rf: CMat, f_bb: CMat) -> Result<Self> {
        let r_bb = &f_bb * f_bb.adjoint();
        let b = Self { f_rf, f_bb: Some(f_bb), r_bb };
        b.validate()?;
        Ok(b)
    }

    pub fn from_covariance(f_rf: CMat, r_bb: CMat) -> Result<Self> {
        let b = Self { f_rf, f_bb: None, r_bb };
        b.validate()?;
        Ok(b)
    }

    pub fn n_t(&self) -> usize {
        self.f_rf.nrows()
    }

    pub fn n_rf(&self) -> usize {
        self.f_rf.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n_rf = self.n_rf();
        if self.r_bb.shape() != (n_rf, n_rf) {
            return Err(Error::InvalidBeamformer(format!(
                "R_BB is {:?}, expected {n_rf}x{n_rf}",
                self.r_bb.shape()
            )));
        }
        if let Some((i, z)) = self.f_rf.iter().enumerate().find(|(_, z)| (z.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidBeamformer(format!("analog entry {i} has modulus {}", z.norm())));
        }
        let scale = self.r_bb.norm().max(1e-300);
        if hermitian_defect(&self.r_bb) > 1e-10 * scale {
            return Err(Error::InvalidBeamformer("R_BB is not Hermitian".into()));
        }
        if self.r_bb.norm() > 0.0 && lambda_min(&self.r_bb) < -1e-10 * scale {
            return Err(Error::InvalidBeamformer("R_BB is not PSD".into()));
        }
        if let Some(f_bb) = &self.f_bb {
            if f_bb.nrows() != n_rf || f_bb.ncols() > n_rf {
                return Err(Error::InvalidBeamformer(format!("F_BB is {:?}", f_bb.shape())));
            }
            if (f_bb * f_bb.adjoint() - &self.r_bb).norm() > 1e-10 * scale.max(1.0) {
                return Err(Error::InvalidBeamformer("R_BB != F_BB F_BB^H".into()));
            }
        }
        Ok(())
    }

    /// `tr(F_RF R_BB F_RF^H)`.
    pub fn power(&self) -> f64 {
        transmit_covariance(self).trace().re
    }
}

/// `R_X = F_RF R_BB F_RF^H`.
pub fn transmit_covariance(b: &HybridBeamformer) -> CMat {
    &b.f_rf * &b.r_bb * b.f_rf.adjoint()
}

/// The four trace terms `tr(A_i R)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceTerms {
    pub t1: f64,
    pub t2: f64,
    pub t3: C64,
    pub t4: f64,
}

pub fn trace_terms(s: &SensingMatrices, r: &CMat) -> TraceTerms {
    TraceTerms {
        t1: trace_product(&s.a1, r).re,
        t2: trace_product(&s.a2, r).re,
        t3: trace_product(&s.a3, r),
        t4: trace_product(&s.a4, r).re,
    }
}

/// Relative threshold on `tr(A4 R)` below which the ratio term is dropped.
pub const RATIO_GUARD: f64 = 1e-14;

/// Data-dependent part of the bound's denominator,
/// `tr(A1 R) + tr(A2 R) - |tr(A3 R)|^2 / tr(A4 R)`, and whether the ratio
/// term had to be dropped.
pub fn sensing_information(s: &SensingMatrices, r: &CMat) -> (f64, bool) {
    let tt = trace_terms(s, r);
    let tr_r = r.trace().re;
    if tt.t4 < RATIO_GUARD * tr_r.max(1.0) {
        (tt.t1 + tt.t2, tr_r > 0.0)
    } else {
        (tt.t1 + tt.t2 - tt.t3.norm_sqr() / tt.t4, false)
    }
}

/// Exact posterior bound on the angle MSE (radians^2).
///
/// `R = 0` yields the prior-only value `1 / prior_fisher`.
pub fn pcrb_exact(s: &SensingMatrices, r: &CMat) -> Result<f64> {
    let tr_r = r.trace().re;
    if r.norm() == 0.0 {
        return Ok(1.0 / s.prior_fisher);
    }
    let tt = trace_terms(s, r);
    if tt.t4 <= RATIO_GUARD * tr_r {
        return Err(Error::DegenerateDenominator(format!("tr(A4 R) = {:.3e}, tr(R) = {tr_r:.3e}", tt.t4)));
    }
    let info = tt.t1 + tt.t2 - tt.t3.norm_sqr() / tt.t4;
    Ok(s.noise_scale / (s.noise_scale * s.prior_fisher + info))
}

/// Exact bound with the guarded ratio term; the flag reports whether the
/// ratio was dropped.
pub fn pcrb_exact_guarded(s: &SensingMatrices, r: &CMat) -> (f64, bool) {
    let (info, dropped) = sensing_information(s, r);
    (s.noise_scale / (s.noise_scale * s.prior_fisher + info), dropped)
}

/// Upper bound that keeps only the `A1` term.
pub fn pcrb_upper(s: &SensingMatrices, r: &CMat) -> f64 {
    let t1 = trace_product(&s.a1, r).re;
    s.noise_scale / (s.noise_scale * s.prior_fisher + t1)
}

/// Upper bound from a precomputed `tr(A1 R)`.
pub fn pcrb_upper_from_objective(s: &SensingMatrices, sensing_objective: f64) -> f64 {
    s.noise_scale / (s.noise_scale * s.prior_fisher + sensing_objective)
}

/// `log2 |I + H R_X H^H / sigma^2|` for a transmit covariance.
pub fn rate_of_covariance(h: &CMat, r_x: &CMat, sigma2: f64) -> f64 {
    let n_u = h.nrows();
    let gram = h * r_x * h.adjoint();
    let m = identity(n_u) + gram.map(|z| z / sigma2);
    match logdet_hpd(&m) {
        Some(ld) => (ld / LN_2).max(0.0),
        // Gram numerically indefinite: fall back on clipped eigenvalues.
        None => crate::linalg::herm_eig(&m).0.iter().map(|v| v.max(1.0).log2()).sum(),
    }
}

/// Achievable rate in bits/s/Hz.
pub fn achievable_rate(h: &CMat, b: &HybridBeamformer, sigma2: f64) -> f64 {
    rate_of_covariance(h, &transmit_covariance(b), sigma2)
}

/// Radiated power `(beta0 / r^2) a^H(theta) R_X a(theta)` at each angle.
pub fn power_pattern(r_x: &CMat, angles: &[f64], path_gain: f64) -> Vec<f64> {
    let n = r_x.nrows();
    angles
        .iter()
        .map(|&t| {
            let a = steering(t, n);
            path_gain * a.dotc(&(r_x * &a)).re.max(0.0)
        })
        .collect()
}

/// Evenly spaced angles over `[-pi/2, pi/2]`, inclusive.
pub fn angle_grid(points: usize) -> Vec<f64> {
    let step = std::f64::consts::PI / (points.max(2) - 1) as f64;
    (0..points).map(|i| -std::f64::consts::FRAC_PI_2 + step * i as f64).collect()
}

/// Full system description. Linear units throughout.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub array: ArrayConfig,
    pub channel: ChannelParams,
    pub prior: GaussianMixturePrior,
    pub reflection: ReflectionModel,
    /// Transmit power budget, watts.
    pub power: f64,
    pub sigma_c2: f64,
    pub sigma_s2: f64,
    pub symbols: usize,
    /// Rate target, bits/s/Hz.
    pub rate_target: f64,
    pub n_rf: usize,
    pub quadrature: QuadratureRule,
    pub options: crate::tradeoff::AoOptions,
}

impl Scenario {
    /// Reference configuration: 12 transmit, 14 receive and 8 user antennas,
    /// 30 dBm budget, -90 dBm noise, -5 dB sensing SNR ratio, 3 RF chains,
    /// 5 bps/Hz target.
    pub fn reference() -> Self {
        let power = 1.0;
        let sigma = 1e-12;
        let symbols = 64;
        let ratio = 10f64.powf(-0.5);
        Self {
            array: ArrayConfig { n_t: 12, n_r: 14 },
            channel: ChannelParams {
                n_u: 8,
                range: 400.0,
                beta0: 1e-3,
                rician_k: 10f64.powf(-0.8),
                angle: 0.36,
                seed: 1,
            },
            prior: GaussianMixturePrior::reference(),
            reflection: ReflectionModel::from_snr_ratio(ratio, power, symbols, sigma, 1e-3, 40.0)
                .expect("reference reflection model"),
            power,
            sigma_c2: sigma,
            sigma_s2: sigma,
            symbols,
            rate_target: 5.0,
            n_rf: 3,
            quadrature: QuadratureRule::default(),
            options: Default::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power > 0.0) || !(self.sigma_c2 > 0.0) || !(self.sigma_s2 > 0.0) {
            return Err(Error::Config("power and noise powers must be positive".into()));
        }
        if self.symbols == 0 {
            return Err(Error::Config("symbol count must be at least 1".into()));
        }
        if !(self.rate_target >= 0.0) {
            return Err(Error::Config("rate target must be nonnegative".into()));
        }
        if self.n_rf == 0 || self.n_rf > self.array.n_t {
            return Err(Error::Config(format!("N_RF = {} must be in 1..=N_T", self.n_rf)));
        }
        self.channel.validate()?;
        if !self.reflection.is_consistent(self.power, self.symbols, self.sigma_s2) {
            return Err(Error::Config("sensing SNR ratio inconsistent with alpha".into()));
        }
        Ok(())
    }

    pub fn sensing(&self) -> Result<SensingMatrices> {
        sensing_matrices(&self.prior, &self.array, &self.reflection, self.symbols, self.sigma_s2, &self.quadrature)
    }

    pub fn channel_matrix(&self) -> Result<CMat> {
        rician_channel(&self.channel, &self.array)
    }

    /// Same scenario with the sensing SNR ratio replaced (linear).
    pub fn with_snr_ratio(&self, ratio: f64) -> Result<Self> {
        let mut s = self.clone();
        s.reflection = ReflectionModel::from_snr_ratio(
            ratio,
            self.power,
            self.symbols,
            self.sigma_s2,
            self.reflection.beta0,
            self.reflection.range,
        )?;
        Ok(s)
    }
}

/// Isotropic covariance `(P / N) I`.
pub fn isotropic(n: usize, power: f64) -> CMat {
    identity(n).map(|z| z * (power / n as f64))
}

/// Coherent covariance `(P / N) a a^H` steered at `theta`.
pub fn steered(n: usize, power: f64, theta: f64) -> CMat {
    let a = steering(theta, n);
    (&a * a.adjoint()).map(|z| z * (power / n as f64))
}
