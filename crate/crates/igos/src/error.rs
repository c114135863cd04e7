//! Crate-wide error types.
//!
//! `FormatError` keeps file-format failures (weight files, IDX datasets,
//! annotation CSVs) distinguishable from plain I/O so callers can map them
//! to different exit codes.

use thiserror::Error;

/// A malformed or unsupported on-disk artifact.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic in {path}: expected {expected}, found {found}")]
    BadMagic {
        path: String,
        expected: String,
        found: String,
    },
    #[error("unsupported format version {found} in {path} (supported: {supported})")]
    UnsupportedVersion {
        path: String,
        found: u32,
        supported: u32,
    },
    #[error("truncated file {path}: needed {needed} bytes, got {got}")]
    Truncated {
        path: String,
        needed: usize,
        got: usize,
    },
    #[error("count mismatch: {0}")]
    CountMismatch(String),
    #[error("malformed {what} at line {line}: {detail}")]
    MalformedLine {
        what: String,
        line: usize,
        detail: String,
    },
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
