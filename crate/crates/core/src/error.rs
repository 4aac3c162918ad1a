use thiserror::Error;

/// Errors raised by grid construction, discretization and the solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FracError {
    #[error("unsupported dimension {0} (expected 1 or 2)")]
    UnsupportedDimension(usize),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fractional order s = {0} outside the admissible range")]
    OrderOutOfRange(f64),

    #[error("empty domain")]
    EmptyDomain,

    #[error("mask belongs to a different grid")]
    GridMismatch,

    #[error("requested {requested} eigenpairs but the domain has {available} cells")]
    TooManyEigenpairs { requested: usize, available: usize },

    #[error("solver did not converge (residual {residual:.3e})")]
    NotConverged { residual: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid cost specification: {0}")]
    InvalidCost(String),

    #[error("enumeration of {count} masks exceeds the guard of {limit}")]
    EnumerationGuard { count: u128, limit: u128 },

    #[error("invalid pair ({0}, {1}): cells must differ")]
    DiagonalPair(usize, usize),

    #[error("maximum principle violated: torsion minimum {0:.3e}")]
    MaximumPrinciple(f64),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for FracError {
    fn from(e: std::io::Error) -> Self {
        FracError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FracError>;
