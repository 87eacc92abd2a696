use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("driver needs at least one (A, B) state")]
    EmptyStates,

    #[error("time {0} is negative or non-finite")]
    InvalidTime(f64),

    #[error("time {t} is not a multiple of 1/{m}")]
    NotGridAligned { t: f64, m: usize },

    #[error("integration produced non-finite values at t = {t}")]
    IntegrationFailure { t: f64 },

    #[error("segment is not continuous at s = 0 but space {0} requires it")]
    SpaceMismatch(String),

    #[error("resource guard: {0}")]
    ResourceGuard(String),

    #[error("irreducibility fails for start index {start}")]
    NotIrreducible { start: usize },

    #[error("initial vector is a kernel vector: U(1)u = 0")]
    KernelVector,

    #[error("pullback iteration not converged: residual {residual:e} > tolerance {tolerance:e}")]
    NotConverged { residual: f64, tolerance: f64 },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("numerical collapse: {0}")]
    NumericalCollapse(String),

    #[error("estimators disagree on {quantity}: {first} vs {second} (tolerance {tolerance:e})")]
    Inconsistent {
        quantity: String,
        first: f64,
        second: f64,
        tolerance: f64,
    },

    #[error("matrix is reducible")]
    Reducible,
}
