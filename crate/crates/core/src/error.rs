use thiserror::Error;

/// Errors raised by the model, oracle, sampling and evaluation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("Markov chain is reducible; states outside the recurrent class of state 1: {unreachable:?}")]
    Reducible { unreachable: Vec<usize> },

    #[error("feature matrix is rank deficient (smallest/largest singular value = {ratio:e})")]
    RankDeficient { ratio: f64 },

    #[error("matrix is singular")]
    Singular,

    #[error("matrix is nearly singular (1-norm condition estimate {condition:e}); small errors in it will dominate the solution")]
    NearSingular { condition: f64 },

    #[error("feature second-moment matrix is singular; unvisited states: {unvisited:?}")]
    InsufficientCoverage { unvisited: Vec<usize> },

    #[error("sampled feature covariance is not invertible; use a longer run or fewer features")]
    CovarianceNotInvertible,

    #[error("iterates diverged at step {step}: |r| = {norm:e} exceeds {threshold:e}")]
    Diverged { step: usize, norm: f64, threshold: f64 },

    #[error("residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("lambda must lie in [0, 1), got {lambda}")))
    }
}
