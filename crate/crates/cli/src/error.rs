use std::path::{Path, PathBuf};

use thiserror::Error;

/// File-format failures. Each malformed-file condition is its own variant.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found}, expected {expected}")]
    Version { expected: u16, found: u16 },
    #[error("truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("payload checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },
    #[error("unknown dtype code {0}")]
    Dtype(u8),
    #[error("expected dtype {expected}, found {found}")]
    WrongDtype { expected: &'static str, found: &'static str },
    #[error("{0} unexpected trailing bytes")]
    Trailing(usize),
    #[error("malformed: {0}")]
    Malformed(String),
}

impl FormatError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Process exit status of a command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Validation = 2,
    Numerical = 3,
}

/// A command failure with the exit status it maps to.
#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Usage,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Validation,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Numerical,
            message: message.into(),
        }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<segse_core::Error> for CliError {
    fn from(e: segse_core::Error) -> Self {
        match e {
            segse_core::Error::NonFiniteLoss { .. } => CliError::numerical(e.to_string()),
            _ => CliError::validation(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
