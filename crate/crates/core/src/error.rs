//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("rank condition fails at this horizon: {0}")]
    RankCondition(String),

    #[error("invalid segment: {0}")]
    InvalidSegment(String),

    #[error("segment evaluated outside [-r0, 0]: theta = {theta}, r0 = {r0}")]
    SegmentOutOfRange { theta: f64, r0: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("path blow-up at step {step} (|state| > {threshold:.1e})")]
    BlowUp { step: usize, threshold: f64 },

    #[error("plan constraint violated: {0}")]
    PlanConstraint(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("all {0} paths were rejected as non-finite")]
    AllPathsRejected(usize),

    #[error("missing map for assumption {0}")]
    MissingMap(&'static str),

    #[error("model file error: {0}")]
    ModelFile(String),
}
