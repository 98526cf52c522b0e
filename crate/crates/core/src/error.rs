use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid patch size {0}: must be between 1 and 64")]
    InvalidSize(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate effective column (frame {frame}, column {column}): zero norm")]
    DegenerateColumn { frame: usize, column: usize },

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("solver failed: residual {residual:e} exceeds epsilon {epsilon:e} after {iters} iterations")]
    SolverFailure {
        residual: f64,
        epsilon: f64,
        iters: usize,
    },

    #[error("recovery failed: {failed} of {total} patches did not solve")]
    RecoveryFailure { failed: usize, total: usize },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("relative error undefined for zero-norm reference")]
    ZeroNormReference,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
