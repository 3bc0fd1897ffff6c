use thiserror::Error;

/// Errors raised by the mCCA routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid block layout: {0}")]
    InvalidLayout(String),

    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },

    #[error("column {0} has zero variance")]
    ConstantColumn(usize),

    #[error("threshold {c} is not below the largest magnitude {max}")]
    DegenerateThreshold { c: f64, max: f64 },

    #[error("projection target is the zero vector")]
    ZeroTarget,

    #[error("l1 bound {bound} outside [1, {max}]")]
    InvalidBound { bound: f64, max: f64 },

    #[error("quadratic form in the denominator is degenerate ({0:e})")]
    DegenerateDenominator(f64),

    #[error("initial direction has l1 norm {l1} above the starting bound {bound}")]
    InfeasibleStart { l1: f64, bound: f64 },

    #[error("trajectory is empty")]
    EmptyTrajectory,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("deflation score has norm {0:e}; direction already removed")]
    DegenerateScore(f64),

    #[error("quadratic form beta' S beta = {0:e} is not positive")]
    DegenerateQuadraticForm(f64),

    #[error("screening selected no features")]
    EmptySelection,

    #[error("Cholesky factorization failed at pivot {0}")]
    CholeskyFailure(usize),

    #[error("{0} did not converge")]
    NoConvergence(&'static str),

    #[error("covariance is not positive definite after {0} attempts")]
    NotPsd(usize),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for failures caused by malformed input rather than numerics or I/O.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::InvalidLayout(_)
                | Error::InvalidBound { .. }
                | Error::InvalidConfig(_)
                | Error::InvalidScenario(_)
                | Error::TooFewSamples { .. }
                | Error::Parse(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::ConstantColumn(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
