use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;
use vips_core::VipsError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("parse error in {}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Model(#[from] VipsError),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        CliError::Parse { path: path.to_path_buf(), line, msg: msg.into() }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) | CliError::Model(VipsError::Domain(_) | VipsError::Config(_)) => "usage",
            CliError::Parse { .. } | CliError::Model(VipsError::Parse { .. }) => "parse",
            CliError::Io { .. } | CliError::Model(VipsError::Io(_)) => "io",
            CliError::Model(VipsError::Calibration(_)) => "calibration",
            CliError::Model(VipsError::Numeric(_)) => "numeric",
        }
    }

    /// 2 usage, 3 i/o, 4 parse, 5 numeric, 6 calibration.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "usage" => 2,
            "io" => 3,
            "parse" => 4,
            "numeric" => 5,
            _ => 6,
        }
    }
}
