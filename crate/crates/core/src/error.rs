use std::path::PathBuf;

use thiserror::Error;

/// Which side of a bipartite layer a state belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Visible,
    Hidden,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Visible => f.write_str("visible"),
            Side::Hidden => f.write_str("hidden"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{side} dimension mismatch: expected {expected} units, got {got}")]
    DimensionMismatch {
        side: Side,
        expected: usize,
        got: usize,
    },

    #[error("enumeration over 2^{bits} states refused: cap is 2^{cap_bits}")]
    EnumerationCap { bits: usize, cap_bits: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("layer {lower} has {hidden} hidden units but layer {upper} has {visible} visible units")]
    Adjacency {
        lower: usize,
        upper: usize,
        hidden: usize,
        visible: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("checkpoint {path} has version {found}, expected {expected}")]
    CheckpointVersion {
        path: PathBuf,
        found: u16,
        expected: u16,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
