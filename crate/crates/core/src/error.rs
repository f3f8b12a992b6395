//! Error type shared across the toolkit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid vocab: {0}")]
    Vocab(String),

    #[error("invalid box: {0}")]
    Box(String),

    #[error("invalid dataset (image {image_id}): {message}")]
    Invariant { image_id: String, message: String },

    #[error("score error: {0}")]
    Score(String),

    #[error("plan error: {0}")]
    Plan(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
