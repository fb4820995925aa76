//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed or unreadable audio container.
    #[error("audio format error: {0}")]
    AudioFormat(String),

    /// Valid container, but an encoding this crate does not decode.
    #[error("unsupported audio encoding: {0}")]
    AudioUnsupported(String),

    /// Clip shorter than one analysis segment; the caller should skip it.
    #[error("clip too short: {have_samples} samples at {rate} Hz (need {need_samples})")]
    ClipTooShort {
        have_samples: usize,
        rate: u32,
        need_samples: usize,
    },

    /// Tensor shape mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Axis out of range for a tensor operation.
    #[error("axis error: axis {axis} invalid for rank {rank}")]
    Axis { axis: usize, rank: usize },

    /// Caller violated an operation contract (non-scalar loss, missing grad, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Invalid parameter value (mask ratio, learning rate, ...).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Contrastive losses need at least two batch items.
    #[error("batch-size error: {0}")]
    BatchSize(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint / feature file violates the container format.
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    /// Checkpoint payload damaged (truncation, CRC mismatch).
    #[error("checkpoint corruption: {0}")]
    CheckpointCorrupt(String),

    /// No usable input data (empty manifest, all clips skipped, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Probe task is malformed (degenerate labels, overlapping splits, ...).
    #[error("task error: {0}")]
    Task(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
