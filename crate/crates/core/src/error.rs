use std::path::PathBuf;

use thiserror::Error;
use uniconv_numcore::NumError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("ontology error: {0}")]
    Ontology(String),
    #[error("invalid dialogue state: {0}")]
    InvalidState(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("query error: {0}")]
    Query(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("training aborted: {0}")]
    Training(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short stable name of the error class, e.g. `config` or `io`.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Num(_) => "numeric",
            Error::Ontology(_) => "ontology",
            Error::InvalidState(_) => "invalid_state",
            Error::Data(_) => "data",
            Error::Query(_) => "query",
            Error::Config(_) => "config",
            Error::Contract(_) => "contract",
            Error::Training(_) => "training",
            Error::Checkpoint(_) => "checkpoint",
            Error::Range(_) => "range",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
