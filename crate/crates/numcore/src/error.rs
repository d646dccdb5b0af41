use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("training error: {0}")]
    Training(String),
}

pub type Result<T> = std::result::Result<T, NumError>;
