use std::path::PathBuf;

use cmj_core::{Complex64, ErrorClass};
use serde_json::json;
use thiserror::Error;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_ASSUMPTION: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_STRICT: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] cmj_core::Error),

    #[error("assumption {assumption} fails: {detail}")]
    Assumption { assumption: &'static str, detail: String },

    #[error("no verified root within {max_distance} of {target}; nearest is {} (widen --region?)", nearest.map_or("none".to_string(), |z| z.to_string()))]
    RootSelection { target: Complex64, nearest: Option<Complex64>, max_distance: f64 },

    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Strict(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::RootSelection { .. } | CliError::Io { .. } => EXIT_USAGE,
            CliError::Assumption { .. } => EXIT_ASSUMPTION,
            CliError::Strict(_) => EXIT_STRICT,
            CliError::Core(e) => match e.class() {
                ErrorClass::Input => EXIT_USAGE,
                ErrorClass::Assumption => EXIT_ASSUMPTION,
                ErrorClass::Numerical => EXIT_NUMERICAL,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.kind(),
            CliError::Assumption { .. } => "assumption",
            CliError::RootSelection { .. } => "root_selection",
            CliError::Io { .. } => "io",
            CliError::Strict(_) => "strict",
        }
    }

    /// `{"error": {"kind", "message", "exit_code"}}`, plus the position of
    /// model parse errors.
    pub fn to_json(&self) -> String {
        let mut body = json!({
            "kind": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        if let CliError::Core(cmj_core::Error::Parse { line, column, .. }) = self {
            body["line"] = json!(line);
            body["column"] = json!(column);
        }
        json!({ "error": body }).to_string()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
