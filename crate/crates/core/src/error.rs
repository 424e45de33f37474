use thiserror::Error;

/// Failures raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no analytic conjugate for {0}; use the numeric solver")]
    NoAnalyticConjugate(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (last iterate {last})")]
    FixedPointDivergence { iterations: usize, last: f64 },

    #[error("quadrature did not converge (estimate {estimate}, error bound {error_bound})")]
    Quadrature { estimate: f64, error_bound: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("q must be prime (got {0})")]
    NotPrime(u64),

    #[error("path of length {n} exceeds one joffe block of size {q}; enable block mode")]
    JoffeBlockMode { n: usize, q: u64 },

    #[error("path length {0} is not of the form 2^n - 1")]
    PathLength(usize),

    #[error("statistic/family mismatch: {0}")]
    KindMismatch(String),

    #[error("degenerate variance: all transformed coordinates are constant")]
    Degenerate,

    #[error("cannot parse slowly varying descriptor {input:?}: {reason}")]
    Descriptor { input: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
