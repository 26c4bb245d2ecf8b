use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{kind} id {id} out of range (< {bound})")]
    IdOutOfRange {
        kind: &'static str,
        id: usize,
        bound: usize,
    },

    #[error("user {user} has interacted with every item; no negative can be sampled")]
    NegativesExhausted { user: usize },

    #[error("divergence in {stage} at iteration {iteration}: {detail}")]
    Divergence {
        stage: &'static str,
        iteration: usize,
        detail: String,
    },

    #[error("sampled mask selects no pair")]
    EmptySelection,

    #[error("contract violation: {0}")]
    Contract(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
