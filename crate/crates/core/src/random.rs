//! Seeded random matrices shared by initializers and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{c, phasor, CMat};

pub type SimRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard complex Gaussian entry, `CN(0, 1)`.
pub fn cn01<R: Rng + ?Sized>(rng: &mut R) -> crate::linalg::C64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(s * re, s * im)
}

pub fn random_cmat<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| cn01(rng))
}

/// Entries `exp(j phi)` with `phi` uniform on `[0, 2 pi)`.
pub fn random_unit_modulus<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| phasor(rng.random_range(0.0..std::f64::consts::TAU)))
}

/// Random PSD matrix with trace `trace`.
pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, n: usize, trace: f64) -> CMat {
    let rank = rng.random_range(1..=n);
    let x = random_cmat(rng, n, rank);
    let r = &x * x.adjoint();
    let t = r.trace().re;
    r.map(|z| z * (trace / t))
}
