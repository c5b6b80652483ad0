use thiserror::Error;

/// Errors raised by the needle kinematics, mapping, control and simulation code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("numerical failure at iteration {iteration}: {message}")]
    NumericalFailure {
        iteration: usize,
        message: String,
        /// Last accepted iterate.
        x: Vec<f64>,
    },

    #[error("reference time {t} s is before the first sample at {first} s")]
    OutOfRange { t: f64, first: f64 },

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_input(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn invalid_config(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}
