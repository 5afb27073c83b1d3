use thiserror::Error;

/// Errors raised by the numerical layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("config parse error at line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("capacity guard: expected {expected:.3e} items exceeds limit {limit:.3e}")]
    Capacity { expected: f64, limit: f64 },

    #[error("query radius {radius} exceeds spatial index cell size {cell_size}")]
    QueryRadius { radius: f64, cell_size: f64 },

    #[error("step size {dt} too large near an obstacle (limit {limit})")]
    StepSize { dt: f64, limit: f64 },

    #[error("particle at t={time} left the padded region")]
    BoundaryContact { time: f64 },

    #[error("root finder failed at node {node} (rho = {rho})")]
    RootFinder { node: usize, rho: f64 },

    #[error("source field is not mean-zero (sphere average {average:.3e})")]
    KernelObstruction { average: f64 },

    #[error("numeric guard: {0}")]
    Numeric(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("rejection sampling failed after {proposals} proposals")]
    Rejection { proposals: usize },

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
