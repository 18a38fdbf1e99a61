use thiserror::Error;

/// Errors raised by the tracking library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("state has a non-finite component: {0:?}")]
    NonFiniteState([f64; 4]),

    #[error("invalid motion model: {0}")]
    InvalidModel(String),

    #[error("virtual leader of an empty member list")]
    EmptyGroup,

    #[error("covariance is singular after regularization")]
    SingularCovariance,

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("non-finite message in data association at {kind}[{row}][{col}]")]
    NumericalFailure {
        kind: &'static str,
        row: usize,
        col: usize,
    },

    #[error("frame time index {got} does not follow filter step {expected}")]
    FrameOutOfOrder { expected: usize, got: usize },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Config {
        field,
        reason: reason.into(),
    }
}
