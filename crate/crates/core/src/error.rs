use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid quadrature rule: {0}")]
    InvalidQuadrature(String),

    #[error("prior density underflow at theta = {theta}")]
    Underflow { theta: f64 },

    #[error("quadrature domain [{lo}, {hi}] does not cover [-pi/2, pi/2]")]
    QuadratureDomain { lo: f64, hi: f64 },

    #[error("degenerate denominator: {0}")]
    DegenerateDenominator(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid beamformer: {0}")]
    InvalidBeamformer(String),

    #[error("covariance is not rank one (lambda2/lambda1 = {ratio:.3e}, objective drop {drop:.3e})")]
    RankTooHigh { ratio: f64, drop: f64 },

    #[error("need at least {needed} RF chains, have {have}")]
    InsufficientRfChains { needed: usize, have: usize },

    #[error("rate target {target:.4} bps/Hz exceeds capacity {capacity:.4} bps/Hz")]
    InfeasibleRate { target: f64, capacity: f64 },

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("solver reached {iterations} iterations without meeting tolerance")]
    MaxIters { iterations: usize },

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("MSE matrix is singular (condition number {cond:.3e})")]
    SingularMse { cond: f64 },

    #[error("FPP-SCA slacks did not vanish after {iterations} iterations (slack sum {slack:.3e})")]
    SlackStall { iterations: usize, slack: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
