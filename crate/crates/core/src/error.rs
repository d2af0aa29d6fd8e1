use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("time {t} lies outside the grid [0, {end}]")]
    TimeOutOfRange { t: f64, end: f64 },

    #[error("time {t} is not a node of the grid")]
    TimeNotOnGrid { t: f64 },

    #[error("grid must be graded toward the drift singularity at t = {singular_time}")]
    UngradedGrid { singular_time: f64 },

    #[error("refined grid drops existing node t = {t}")]
    DroppedNode { t: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("operation requires the two-dimensional shear counterexample drift")]
    NotCounterexample,

    #[error("drift does not provide a {0}")]
    MissingCapability(&'static str),

    #[error("sup|∇U| = {sup_grad} ≥ 1: x + U(t,x) is not certified as a diffeomorphism")]
    SingularTransform { sup_grad: f64 },

    #[error("estimate at x = {x} is not positive ({value:e})")]
    NonPositiveEstimate { x: f64, value: f64 },
}

pub(crate) fn invalid(name: &'static str, reason: &'static str) -> Error {
    Error::InvalidParameter { name, reason }
}
