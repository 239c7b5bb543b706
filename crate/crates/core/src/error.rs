use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AtlError>;

#[derive(Debug, Error)]
pub enum AtlError {
    #[error("duplicate HOI pair (verb {verb}, object {object})")]
    DuplicatePair { verb: usize, object: usize },

    #[error("{what} id {id} out of range (0..{len})")]
    OutOfRange {
        what: &'static str,
        id: usize,
        len: usize,
    },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("degenerate box {0:?}")]
    DegenerateBox([f64; 4]),

    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("affordance bank has no entries")]
    EmptyBank,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl AtlError {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        AtlError::Dimension {
            what,
            expected,
            got,
        }
    }
}

/// Fails with [`AtlError::Dimension`] unless `got == expected`.
pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(AtlError::dim(what, expected, got))
    }
}
