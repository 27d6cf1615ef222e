use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] effmarket_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown room {0}")]
    NotFound(String),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
