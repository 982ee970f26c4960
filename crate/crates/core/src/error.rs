use std::path::PathBuf;

use thiserror::Error;

use crate::domain::SchemeId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("empty domain: {0}")]
    EmptyDomain(&'static str),

    #[error("key misuse: operation expects a {expected} key, got {found}")]
    KeyMisuse { expected: SchemeId, found: SchemeId },

    #[error("unknown scheme {0:?} (expected LE, ETC or ELE)")]
    Scheme(String),

    #[error("parse error at line {line}, field `{field}`: {msg}")]
    Parse {
        line: usize,
        field: String,
        msg: String,
    },

    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("state error: {0}")]
    State(&'static str),

    #[error("non-finite values in tensor `{tensor}`")]
    NonFinite { tensor: String },

    #[error("{0}")]
    Domain(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}
