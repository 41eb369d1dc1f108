use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: invalid record: {message}")]
    Validation {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown {kind} id {id:?} referenced by {referrer}")]
    DanglingReference {
        kind: &'static str,
        id: String,
        referrer: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty collection: no terms survive tokenization")]
    EmptyCollection,

    #[error("background model is empty")]
    EmptyBackground,

    #[error("group {0:?} has no members with relevant preferences")]
    EmptyGroup(String),

    #[error("general model assigns no probability to group term {0:?}")]
    UncoveredTerm(String),

    #[error("non-positive mixture probability for observed term {term:?} of user {user:?}")]
    NonPositiveMixture { user: String, term: String },

    #[error("run for request {run:?} evaluated against qrels of request {qrels:?}")]
    RequestMismatch { run: String, qrels: String },

    #[error("{0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation { .. }
                | Error::DanglingReference { .. }
                | Error::InvalidArgument(_)
                | Error::Format(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
