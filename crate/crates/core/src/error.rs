use thiserror::Error;

/// Errors raised by the solvers. Every variant carries the `module::operation`
/// that produced it so CLI messages can name the failing stage.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("{op}: point {point:?} lies outside the chart domain")]
    Domain { op: &'static str, point: Vec<f64> },

    #[error("{op}: point {point:?} lies inside the chart-singularity guard band")]
    ChartGuard { op: &'static str, point: Vec<f64> },

    #[error("{op}: one-form vanishes at {point:?} (|omega| = {norm:e})")]
    OmegaVanishes { op: &'static str, point: Vec<f64>, norm: f64 },

    #[error("{op}: vector is not admissible (-omega(v) = {margin:e})")]
    InadmissibleVector { op: &'static str, margin: f64 },

    #[error("{op}: path is not admissible at segment {segment}")]
    InadmissiblePath { op: &'static str, segment: usize },

    #[error("{op}: trajectory velocity left the admissible cone at s = {s}")]
    ConeExit { op: &'static str, s: f64 },

    #[error("{op}: step size underflow at s = {s}")]
    StepUnderflow { op: &'static str, s: f64 },

    #[error("{op}: parameter out of range: {what}")]
    OutOfRange { op: &'static str, what: String },

    #[error("{op}: wind is not critical, |W| = {norm} at {point:?}")]
    NotCriticalWind { op: &'static str, norm: f64, point: Vec<f64> },

    #[error("{op}: metric is not positive definite at {point:?}")]
    NotPositiveDefinite { op: &'static str, point: Vec<f64> },

    #[error("{op}: hypothesis violated: {residual}")]
    HypothesisViolated { op: &'static str, residual: String },

    #[error("{op}: no admissible curve in the requested class: {reason}")]
    NoAdmissibleSeed { op: &'static str, reason: String },

    #[error("{op}: reachable-set boundary is empty ({reason})")]
    BoundaryEmpty { op: &'static str, reason: String },

    #[error("{op}: {what}")]
    Invalid { op: &'static str, what: String },

    #[error("{op}: expression error in {field} at line {line}, column {column}: {message}")]
    Expression {
        op: &'static str,
        field: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{op}: {path}: {message}")]
    Io {
        op: &'static str,
        path: String,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
