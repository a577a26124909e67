use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the indicator pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("author {author} has no career yet in {year}")]
    NoCareer { author: String, year: i32 },

    #[error("node {0} is not part of the network")]
    NodeAbsent(usize),

    #[error("author {author} is not in the {year} network")]
    AuthorAbsent { author: String, year: i32 },

    #[error("author {0} has no field label")]
    NoField(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact {path}: run stage `{stage}` first")]
    MissingArtifact { stage: &'static str, path: PathBuf },

    #[error("malformed artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn artifact(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Artifact {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
