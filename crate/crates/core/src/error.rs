use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LidError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LidError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot decode {path}: unsupported {field} ({detail})")]
    Decode {
        path: PathBuf,
        field: &'static str,
        detail: String,
    },

    #[error("clip too short: {samples} samples, need at least {window}")]
    TooShort { samples: usize, window: usize },

    #[error("malformed {kind} file, section `{section}`: {detail}")]
    Format {
        kind: &'static str,
        section: String,
        detail: String,
    },

    #[error("unsupported {kind} version {found} (expected {expected})")]
    UnsupportedVersion {
        kind: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("parameter `{name}` has shape {found:?}, model expects {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("{source_name}:{line}: {detail}")]
    Data {
        source_name: String,
        line: usize,
        detail: String,
    },

    #[error("non-finite loss at step {step}: {value}")]
    Numeric { step: u64, value: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LidError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LidError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        LidError::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
