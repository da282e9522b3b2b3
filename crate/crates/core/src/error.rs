use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("size error: {0}")]
    Size(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parse error at byte {offset} near `{token}`: {message}")]
    Parse {
        offset: usize,
        token: String,
        message: String,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("root consistency error: {0}")]
    RootConsistency(String),
    #[error("reference error: {0}")]
    Reference(String),
    #[error("empty set: {0}")]
    EmptySet(String),
    #[error("simulation diverged at step {step}")]
    Divergence { step: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
