//! Error types shared across the crate.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or parameters.
    Config,
    /// Filesystem or serialization failure.
    Io,
    /// A resource guard (e.g. the pairwise-scorer cap) tripped.
    ResourceCap,
    /// Numerical failure (factorization, convergence, non-finite values).
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad manifest at {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("size mismatch in {path}: expected {expected} bytes, found {actual}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: String, index: usize },
    #[error("location ({row}, {col}) violates margin {margin} for patch side {side}")]
    OutOfMargin {
        row: usize,
        col: usize,
        side: usize,
        margin: usize,
    },
    #[error("location ({row}, {col}) outside {height}x{width} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("grid {height}x{width} has no interior candidates for patch side {side}")]
    NoCandidates {
        height: usize,
        width: usize,
        side: usize,
    },
    #[error("duplicate measurement at ({row}, {col})")]
    DuplicateLocation { row: usize, col: usize },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("{what} needs at least {required} points, got {actual}")]
    InsufficientPoints {
        what: &'static str,
        required: usize,
        actual: usize,
    },
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("pairwise scorer cap exceeded: {n} points > cap {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("solver did not converge within {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("Cholesky factorization failed after jitter escalation to {jitter:e}")]
    CholeskyFailure { jitter: f64 },
    #[error("non-finite gradient during {what} at epoch {epoch}")]
    NonFiniteGradient { what: &'static str, epoch: usize },
    #[error("degenerate range: {what} is constant")]
    DegenerateRange { what: &'static str },
    #[error("all candidates already measured")]
    CandidatesExhausted,
    #[error("empty measured set passed to {what}")]
    EmptyMeasuredSet { what: &'static str },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Manifest { .. }
            | Error::SizeMismatch { .. }
            | Error::NonFinite { .. } => ErrorKind::Io,
            Error::CapExceeded { .. } => ErrorKind::ResourceCap,
            Error::NonConvergence { .. }
            | Error::CholeskyFailure { .. }
            | Error::NonFiniteGradient { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Config,
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
