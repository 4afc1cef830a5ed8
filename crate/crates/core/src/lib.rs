//! Posterior Cramér-Rao bound evaluation and hybrid analog-digital
//! beamforming design for a MIMO sensing-and-communication transmitter.
//!
//! The target angle is random with a Gaussian-mixture prior. The crate
//! assembles the prior-averaged sensing matrices, evaluates the exact and
//! upper posterior bounds, designs sensing-only hybrid beamformers, and runs
//! the alternating bound/rate trade-off optimizer together with its
//! benchmarks.

pub mod array;
pub mod channel;
pub mod conic;
pub mod error;
pub mod linalg;
pub mod mc;
pub mod metrics;
pub mod prior;
pub mod random;
pub mod runner;
pub mod sensing;
pub mod tradeoff;

pub use error::{Error, Result};
