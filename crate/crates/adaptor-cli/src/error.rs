//! CLI error type with a stable exit-code contract.
//!
//! Exit codes: `0` success, `2` validation/parse failure, `3` numeric
//! failure during training or evaluation.

use std::path::PathBuf;

/// Structured parse errors for the `ADPC` and `ADPK` binary formats. Each
/// corruption mode maps to a distinct variant so scripts can tell a stale
/// file from a damaged one.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {found}, expected {expected}")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("file truncated: need {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("trailing data: expected {expected} bytes total, found {found}")]
    TrailingData { expected: u64, found: u64 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    /// A header field holds an invalid value (zero dimension, unknown split
    /// byte, nonzero reserved bytes, size overflow, ...).
    #[error("invalid header: {0}")]
    Header(String),
}

/// Top-level CLI error. Everything a command can fail with funnels through
/// here so the binary can map it to the documented exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {message}")]
    Json { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error(transparent)]
    Core(#[from] adaptor_core::Error),
    /// Command-level validation: bad flag combinations, occupied output
    /// directories, incompatible artifacts.
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        CliError::Json { path: path.into(), message: err.to_string() }
    }

    pub fn format(path: impl Into<PathBuf>, source: FormatError) -> Self {
        CliError::Format { path: path.into(), source }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Invalid(msg.into())
    }

    /// Documented exit code: numeric failures are `3`, every other failure
    /// (validation, parse, IO, format) is `2`.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(adaptor_core::Error::Numeric(_)) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
