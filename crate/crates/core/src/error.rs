use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dimension mismatch between layer {prev} ({prev_desc}, output {prev_out}) and layer {next} ({next_desc}, input {next_in})")]
    LayerChain {
        prev: usize,
        prev_desc: String,
        prev_out: usize,
        next: usize,
        next_desc: String,
        next_in: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("backward called without a recorded forward pass")]
    NoForward,

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("{stage} diverged at epoch {epoch}")]
    Diverged { stage: &'static str, epoch: usize },

    /// Carries the last state whose values were all finite.
    #[error("SAM optimization diverged at epoch {epoch}")]
    SamDiverged {
        epoch: usize,
        last_state: Box<crate::sam::SamState>,
    },

    #[error("digest mismatch: expected {expected}, found {found}")]
    DigestMismatch { expected: String, found: String },

    #[error("malformed {kind} data: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(kind: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            kind,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
