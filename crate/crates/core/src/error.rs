use thiserror::Error;

/// Errors raised by the fragmentation toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("argument {value} outside the domain {domain}")]
    Domain { value: f64, domain: &'static str },
    #[error("moment of order {k} appears divergent (tail estimate {tail:.3e})")]
    DivergentMoment { k: u32, tail: f64 },
    #[error("first moment {0:.3e} too small for the limit measure")]
    ZeroMean(f64),
    #[error("threshold {0} must lie in (0, 1)")]
    InvalidThreshold(f64),
    #[error("fragment budget of {cap} exceeded")]
    BudgetExceeded { cap: usize },
    #[error("noise level {sigma} must be below half the threshold {epsilon}")]
    NoiseTooLarge { sigma: f64, epsilon: f64 },
    #[error("cutoff width {0} must lie in (0, 1)")]
    InvalidGamma(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("kernel order {0} is ill-conditioned (maximum 10)")]
    IllConditioned(usize),
    #[error("kernel support ({lo}, {hi}) leaves (0, 1)")]
    SupportOverflow { lo: f64, hi: f64 },
    #[error("degenerate denominator {0:.3e} in moment estimator")]
    DegenerateDenominator(f64),
    #[error("sampler failure: {0}")]
    SamplerFailure(String),
    #[error("dislocation density is not bounded away from zero (infimum {0})")]
    AssumptionDViolated(f64),
    #[error("degenerate rate fit: {0}")]
    DegenerateFit(String),
    #[error("quadrature failed to converge (estimated error {0:.3e})")]
    Quadrature(f64),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
