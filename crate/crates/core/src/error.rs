use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by the failure class the CLI maps to exit codes:
/// configuration/format problems are validation failures, I/O is a runtime
/// failure, and `NonFinite` is a numeric failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: {detail}")]
    Param { op: &'static str, detail: String },

    #[error("batchnorm: train mode requires batch size >= 2, got {batch}")]
    DegenerateBatch { batch: usize },

    #[error("softmax: every position is masked, no support left")]
    EmptySupport,

    #[error("{op}: produced a non-finite value (overflow or NaN)")]
    NonFinite { op: &'static str },

    #[error("backward: {0}")]
    Backward(String),

    #[error("lyrics are empty: no unmasked sentence in token grid")]
    EmptyLyrics,

    #[error("{path}: format error at byte {offset}: {detail}")]
    Format {
        path: String,
        offset: u64,
        detail: String,
    },

    #[error("{path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
