//! Rician downlink channel with a ULA line-of-sight component.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::array::{steering, ArrayConfig};
use crate::error::{Error, Result};
use crate::linalg::{c, CMat};

pub const PATHLOSS_EXPONENT: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub n_u: usize,
    /// BS-user distance in meters.
    pub range: f64,
    /// Reference channel power at 1 m (linear).
    pub beta0: f64,
    /// Rician factor (linear).
    pub rician_k: f64,
    /// User angle in radians.
    pub angle: f64,
    pub seed: u64,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_u == 0 {
            return Err(Error::Config("user antenna count must be at least 1".into()));
        }
        if !(self.range > 0.0) {
            return Err(Error::Config("user range must be positive".into()));
        }
        if !(self.rician_k >= 0.0) {
            return Err(Error::Config("Rician factor must be nonnegative".into()));
        }
        if !(self.beta0 > 0.0) {
            return Err(Error::Config("reference channel power must be positive".into()));
        }
        Ok(())
    }

    /// Average channel power `beta0 / r^3.5`.
    pub fn path_gain(&self) -> f64 {
        self.beta0 / self.range.powf(PATHLOSS_EXPONENT)
    }
}

/// `H_LoS = b_U(theta_U) a^H(theta_U)`.
pub fn los_component(params: &ChannelParams, cfg: &ArrayConfig) -> CMat {
    steering(params.angle, params.n_u) * steering(params.angle, cfg.n_t).adjoint()
}

/// i.i.d. `CN(0, 1)` entries (real and imaginary parts each of variance 1/2).
pub fn nlos_component(params: &ChannelParams, cfg: &ArrayConfig) -> CMat {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(params.n_u, cfg.n_t, |_, _| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        c(s * re, s * im)
    })
}

/// `H = sqrt(beta_C / (K + 1)) (sqrt(K) H_LoS + H_NLoS)`, `N_U x N_T`.
pub fn rician_channel(params: &ChannelParams, cfg: &ArrayConfig) -> Result<CMat> {
    params.validate()?;
    let k = params.rician_k;
    let scale = (params.path_gain() / (k + 1.0)).sqrt();
    let los = los_component(params, cfg);
    let nlos = nlos_component(params, cfg);
    Ok((los.map(|z| z * k.sqrt()) + nlos).map(|z| z * scale))
}
