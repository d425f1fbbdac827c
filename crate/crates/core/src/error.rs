use thiserror::Error;

/// Errors raised across the engine.
///
/// `Config` is reserved for invalid user-facing settings; the CLI maps it to
/// exit status 1, everything else to 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("render error: segment content contains reserved tag literal {0:?}")]
    ReservedLiteral(String),

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
