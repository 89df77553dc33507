use thiserror::Error;

pub type Result<T> = std::result::Result<T, TbqnError>;

#[derive(Debug, Error)]
pub enum TbqnError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    /// A caller violated an operation precondition.
    #[error("contract error: {0}")]
    Contract(String),

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: u64, reason: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl TbqnError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        TbqnError::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        TbqnError::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        TbqnError::Contract(msg.into())
    }
}
