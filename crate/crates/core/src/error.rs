use std::path::PathBuf;

use crate::llm::LlmError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{location}: {message}")]
    Parse { location: String, message: String },

    #[error("record {index}: missing or invalid field `{field}`")]
    Schema { index: usize, field: String },

    #[error("duplicate {what}: {key}")]
    Duplicate { what: &'static str, key: String },

    #[error("empty collection")]
    EmptyCollection,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("unusable completion: {0:?}")]
    UnusableCompletion(String),

    #[error("missing labels for {} task(s): {}", .0.len(), .0.join(", "))]
    MissingLabels(Vec<String>),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Llm(#[from] LlmError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }

    /// True for errors caused by bad or missing input files rather than runtime failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::Schema { .. }
                | Error::Duplicate { .. }
                | Error::Json(_)
                | Error::MissingLabels(_)
        )
    }
}
