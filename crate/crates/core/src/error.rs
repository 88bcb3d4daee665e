use thiserror::Error;

/// Everything that can go wrong inside the library.
///
/// Variants distinguish caller mistakes (dimension mismatches, invalid
/// parameters) from numerical failures (non-convergence, invariant
/// violations) so that front ends can map them to different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left}x{left} vs {right}x{right} in {context}")]
    DimensionMismatch {
        left: usize,
        right: usize,
        context: &'static str,
    },

    #[error("matrix is not Hermitian: relative asymmetry {asymmetry:.3e} exceeds {tol:.3e}")]
    NotHermitian { asymmetry: f64, tol: f64 },

    #[error("matrix contains non-finite entries in {context}")]
    NonFinite { context: &'static str },

    #[error("eigensolver failed to converge within {max_iterations} iterations")]
    EigenNonConvergence { max_iterations: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("density matrix invariant violated: {0}")]
    InvalidState(String),

    #[error("time grid misaligned: {0}")]
    GridMisaligned(String),

    #[error("mismatched series: {0}")]
    SeriesMismatch(String),

    #[error("configuration index {index} out of range for ensemble of size {size}")]
    ConfigurationOutOfRange { index: usize, size: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
