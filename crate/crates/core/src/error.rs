use std::path::{Path, PathBuf};

use thiserror::Error;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Io,
    UndefinedMetric,
    Internal,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Validation => 2,
            ErrorCategory::Io => 3,
            ErrorCategory::UndefinedMetric => 4,
            ErrorCategory::Internal => 5,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ErrorCategory::Validation => "validation",
            ErrorCategory::Io => "io",
            ErrorCategory::UndefinedMetric => "undefined metric",
            ErrorCategory::Internal => "internal",
        }
    }
}

#[derive(Debug, Error)]
pub enum MistError {
    #[error("configuration error at key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("{path}: malformed file at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

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

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of bounds: {0}")]
    Index(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl MistError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            MistError::Config { .. }
            | MistError::Validation { .. }
            | MistError::Format { .. }
            | MistError::Json { .. }
            | MistError::Shape(_)
            | MistError::Index(_) => ErrorCategory::Validation,
            MistError::Io { .. } => ErrorCategory::Io,
            MistError::UndefinedMetric(_) => ErrorCategory::UndefinedMetric,
            MistError::Internal(_) => ErrorCategory::Internal,
        }
    }

    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        MistError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        MistError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn json(path: impl AsRef<Path>, source: serde_json::Error) -> Self {
        MistError::Json {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<Path>, offset: u64, message: impl Into<String>) -> Self {
        MistError::Format {
            path: path.as_ref().to_path_buf(),
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MistError>;
