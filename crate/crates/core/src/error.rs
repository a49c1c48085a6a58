use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite (min eigenvalue {min_eigenvalue:e}, max {max_eigenvalue:e})")]
    NotPositiveDefinite {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is numerically singular (condition estimate {condition:e})")]
    NearSingular { condition: f64 },

    #[error("horizon {tau} years reaches the maximal horizon T* = {t_star}")]
    HorizonBeyondTstar { tau: f64, t_star: f64 },

    #[error("invalid inputs: {0}")]
    Validation(ValidationReport),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("terminal variance {variance:e} is degenerate (mean {mean:e})")]
    DegenerateVariance { mean: f64, variance: f64 },

    #[error("no bracket for target default probability {target} over lambda in [{lo:e}, {hi:e}]")]
    NoBracket { target: f64, lo: f64, hi: f64 },

    #[error("horizon is beyond T* for every scanned risk aversion")]
    InfeasibleHorizon,

    #[error("discrete objective is not concave (pivot block {step} is not negative definite)")]
    NotConcave { step: usize },
}
