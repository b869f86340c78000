use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Scenario(String),
}

impl AppError {
    pub fn validation(msg: impl Into<String>) -> Self {
        AppError::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AppError::Io { .. } => "io",
            AppError::Json { .. } => "format",
            AppError::Csv { .. } => "format",
            AppError::Validation(_) => "validation",
            AppError::Scenario(_) => "scenario",
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Scenario(_) => 2,
            _ => 1,
        }
    }

    pub fn diagnostic(&self) -> Diagnostic {
        Diagnostic {
            level: "error",
            kind: self.kind(),
            message: self.to_string(),
            argument: None,
        }
    }
}

/// One-line JSON error report written to stderr.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostic {
    pub level: &'static str,
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub argument: Option<String>,
}

impl Diagnostic {
    pub fn to_line(&self) -> String {
        // Messages may carry newlines from nested errors; JSON escapes them.
        serde_json::to_string(self).expect("diagnostic serializes")
    }
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;
