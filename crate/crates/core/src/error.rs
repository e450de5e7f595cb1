use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DgpError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Two constraint points are too close for the derivative block to stay
    /// invertible.
    #[error("constraint points {first} and {second} are closer than {min_separation}")]
    DegenerateConstraint {
        first: f64,
        second: f64,
        min_separation: f64,
    },

    /// Cholesky failed even with the largest jitter on the ladder.
    #[error("matrix is not positive definite (final jitter {eta:e})")]
    NotPositiveDefinite { eta: f64 },

    #[error("degenerate density: {0}")]
    DegenerateDensity(String),

    /// Every step of an E-step sweep failed.
    #[error("E-step failed at iteration {iteration}, draw {index}: {reason}")]
    EStep {
        iteration: usize,
        index: usize,
        reason: String,
    },
}

pub type Result<T, E = DgpError> = std::result::Result<T, E>;
