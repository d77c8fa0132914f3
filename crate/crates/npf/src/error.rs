use thiserror::Error;

/// Errors surfaced by the solver library.
#[derive(Error, Debug)]
pub enum NpfError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numerical diagnostics: {0}")]
    Diagnostics(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NpfError>;

impl NpfError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        NpfError::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        NpfError::Config(msg.into())
    }
}
