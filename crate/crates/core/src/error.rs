//! Error type shared by all modules of the crate.

use std::path::PathBuf;

/// Errors produced by audio I/O, spectral analysis and the factorization
/// algorithms.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {reason}")]
    WavDecode { path: PathBuf, reason: String },

    #[error("audio stream contains no samples")]
    EmptyAudio,

    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),

    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: u32, right: u32 },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("signal of {len} samples is shorter than one analysis window of {window_len}")]
    SignalTooShort { len: usize, window_len: usize },

    #[error("non-finite value in input matrix")]
    NonFiniteMatrix,

    #[error("filter length {filter_len} exceeds the {frames} available frames")]
    FilterTooLong { filter_len: usize, frames: usize },

    #[error("sparsity weight must be non-negative, got {0}")]
    NegativeSparsity(f64),

    #[error("invalid factorization parameter: {0}")]
    InvalidParameter(String),

    #[error("impulse response has no usable -5..-25 dB decay range")]
    DecayRangeUnreachable,

    #[error("malformed CSV at line {line}: {reason}")]
    Csv { line: usize, reason: String },

    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),

    #[error("every frame fell below the energy gate")]
    AllFramesGated,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
