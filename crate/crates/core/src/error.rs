use thiserror::Error;

/// Errors raised by the numerical core.
///
/// Validation variants carry the measured violation so callers can report
/// how far outside tolerance an input was.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix has non-finite entries")]
    NonFiniteInput,

    #[error("matrix is not Hermitian: max |A - A^dagger| = {deviation:e} exceeds {tolerance:e}")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("trace is {trace} (|tr - 1| = {deviation:e} exceeds {tolerance:e})")]
    NotTraceOne { trace: f64, deviation: f64, tolerance: f64 },

    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eigenvalue:e} below -{tolerance:e}")]
    NotPositive { min_eigenvalue: f64, tolerance: f64 },

    #[error("Hermitian eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    EigenSolverFailure { sweeps: usize, residual: f64 },

    #[error("level {level} has probability {probability:e}, at or below the floor {floor:e}")]
    ZeroProbabilitySubspace { level: usize, probability: f64, floor: f64 },

    #[error("level index {level} out of range for {levels} levels")]
    LevelOutOfRange { level: usize, levels: usize },

    #[error("off-diagonal potential needs two distinct levels, got n = m = {level}")]
    SameLevel { level: usize },

    #[error("all level probabilities are below the floor {floor:e}")]
    DegenerateDistribution { floor: f64 },

    #[error("step {step} diverged: {reason}")]
    StepDivergence { step: usize, reason: StepFailure },

    #[error("invalid time grid: {0}")]
    InvalidGrid(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: &'static str },

    #[error("path {path} failed: {source}")]
    PathFailure {
        path: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

/// Why a time step was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum StepFailure {
    #[error("state became non-finite")]
    NonFinite,
    #[error("trace collapsed to {0:e}")]
    TraceCollapse(f64),
    #[error("negative eigenvalue {min_eigenvalue:e} beyond clamp tolerance {clamp_tol:e}")]
    NegativeEigenvalue { min_eigenvalue: f64, clamp_tol: f64 },
    #[error("state vector norm collapsed to {0:e}")]
    ZeroNorm(f64),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Error {
        match self {
            Error::StepDivergence { reason, .. } => Error::StepDivergence { step, reason },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
