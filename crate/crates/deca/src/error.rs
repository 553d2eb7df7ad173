use std::path::Path;

use serde_json::json;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] deca_core::Error),
    #[error("incompatible checkpoint and dataset: {}", .diffs.join("; "))]
    Incompatible { diffs: Vec<String> },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
            CliError::Format(_) => "format",
            CliError::Core(e) => e.kind(),
            CliError::Incompatible { .. } => "incompatible",
            CliError::Protocol(_) => "protocol_violation",
            CliError::NonFiniteLoss { .. } => "non_finite_loss",
        }
    }

    /// Machine-readable form written to stderr by the CLI.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        if let CliError::Incompatible { diffs } = self {
            v["diffs"] = json!(diffs);
        }
        v
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Format(e.to_string())
    }
}
