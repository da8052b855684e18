use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{what} mismatch: expected {expected}, found {found}")]
    Fingerprint { what: String, expected: String, found: String },
    #[error("missing artifact {0} (run the upstream command first)")]
    MissingArtifact(PathBuf),
    #[error(transparent)]
    Core(#[from] tracelens_core::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Parse { .. } => "parse",
            CliError::Format { .. } => "format",
            CliError::Config(_) => "config",
            CliError::Fingerprint { .. } => "fingerprint_mismatch",
            CliError::MissingArtifact(_) => "missing_artifact",
            CliError::Core(e) => e.kind(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Fingerprint { .. } | CliError::MissingArtifact(_) => 3,
            CliError::Parse { .. } | CliError::Format { .. } => 4,
            _ => 1,
        }
    }

    /// Machine-readable description printed on failure.
    pub fn to_json(&self) -> Value {
        let mut detail = json!({});
        match self {
            CliError::Io { path, .. } | CliError::Format { path, .. } => {
                detail["path"] = json!(path.display().to_string());
            }
            CliError::Parse { path, line, .. } => {
                detail["path"] = json!(path.display().to_string());
                detail["line"] = json!(line);
            }
            CliError::Fingerprint { what, expected, found } => {
                detail["hash"] = json!(what);
                detail["expected"] = json!(expected);
                detail["found"] = json!(found);
            }
            CliError::MissingArtifact(path) => {
                detail["path"] = json!(path.display().to_string());
            }
            _ => {}
        }
        json!({
            "error": {
                "kind": self.kind(),
                "message": self.to_string(),
                "exit_code": self.exit_code(),
                "detail": detail,
            }
        })
    }
}

impl From<toml::de::Error> for CliError {
    fn from(e: toml::de::Error) -> Self {
        CliError::Config(e.to_string())
    }
}
