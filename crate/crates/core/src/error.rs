use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum VipsError {
    /// An argument outside its valid domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine failed to converge or produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Noise calibration could not reach the requested budget.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// Malformed input text.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Invalid or conflicting configuration.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, VipsError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(VipsError::Domain(msg.into()))
}

pub(crate) fn numeric<T>(msg: impl Into<String>) -> Result<T> {
    Err(VipsError::Numeric(msg.into()))
}
