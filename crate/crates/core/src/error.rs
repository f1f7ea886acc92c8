use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}{}: {msg}", file.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Corpus {
        file: PathBuf,
        line: Option<usize>,
        msg: String,
    },

    #[error("embedding file: {0}")]
    Embedding(String),

    #[error("embedding file truncated at byte offset {offset} while reading {what}")]
    Truncated { offset: usize, what: &'static str },

    #[error("missing embedding for {kind} '{id}'")]
    MissingEmbedding { kind: &'static str, id: String },

    #[error("label '{label}' occurs {found} times in the pool, fewer than k = {k}")]
    Infeasible { label: String, found: usize, k: usize },

    #[error("pool too small: {0}")]
    InsufficientPool(String),

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("model file: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn corpus(file: impl Into<PathBuf>, line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Corpus {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad input data rather than bad parameters or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Corpus { .. }
                | Error::Embedding(_)
                | Error::Truncated { .. }
                | Error::MissingEmbedding { .. }
                | Error::Infeasible { .. }
                | Error::InsufficientPool(_)
                | Error::Model(_)
                | Error::Shape(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }

    pub fn is_numeric_error(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}
