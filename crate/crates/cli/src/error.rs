use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// The config file does not parse or holds inconsistent values.
    #[error("config error in {origin}: {detail}")]
    Config { origin: String, detail: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] nlap_core::Error),

    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.kind(),
            CliError::Io { .. } => "io",
            CliError::Json(_) => "json",
            CliError::Csv(_) => "csv",
        }
    }

    /// 2 for problems with the invocation or config, 1 for failures while
    /// computing.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 2,
            CliError::Core(nlap_core::Error::Usage(_) | nlap_core::Error::Parse(_)) => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut body = json!({ "kind": self.kind(), "message": self.to_string() });
        if let CliError::Core(nlap_core::Error::Validation { condition, .. }) = self {
            body["condition"] = json!(condition);
        }
        json!({ "error": body })
    }
}
