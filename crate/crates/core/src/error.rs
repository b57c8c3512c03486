use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong between loading a config and writing a report.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes for an op.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Spatial arithmetic that does not work out (window, stride, block tiling).
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("config error: {0}")]
    Config(String),

    /// Malformed container, checkpoint or code file.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("data error: {0}")]
    Data(String),

    /// A batch without similar or without dissimilar pairs.
    #[error("degenerate batch: {similar} similar / {dissimilar} dissimilar pairs")]
    DegenerateBatch { similar: usize, dissimilar: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("backward error: {0}")]
    Backward(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Geometry(_) | Error::Dimension { .. } => 2,
            Error::Parse { .. } | Error::Data(_) | Error::DegenerateBatch { .. } | Error::Io { .. } => 3,
            Error::NonFinite(_) | Error::Backward(_) => 4,
        }
    }
}
