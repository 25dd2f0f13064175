//! Command-line workflows: validate, calibrate, evaluate, simulate,
//! normality and report.
//!
//! Every command that takes `--out` writes `run_config.json` next to its
//! artifacts. Files are written to a temporary name and renamed into place,
//! so an interrupted run never leaves a truncated artifact.

mod args;
mod commands;
mod config;

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub use args::{Cli, Command, EvaluateArgs, PartitionArgs, ReportArgs, SimulateArgs, ValidateArgs};
pub use commands::{evaluate, run, BackendFactory, EvaluateSummary};
pub use config::{parse_backend, RunConfig, SimulateSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// Bad input data. `diagnostics` is machine-readable detail for stdout.
    #[error("{message}")]
    Validation {
        message: String,
        diagnostics: Option<String>,
    },
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn validation(message: impl std::fmt::Display) -> Self {
        CliError::Validation {
            message: message.to_string(),
            diagnostics: None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation { .. } | CliError::Io(_) => EXIT_VALIDATION,
            CliError::Backend(_) => EXIT_BACKEND,
        }
    }
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}
