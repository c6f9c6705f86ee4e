use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("row error at line {line}: {reason}")]
    Row { line: u64, reason: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("balance error: driver {driver}: {reason}")]
    Balance { driver: u32, reason: String },

    #[error("segment too short: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("wiring error: {0}")]
    Wiring(String),

    #[error("label {label} out of range for {n_classes} classes")]
    Label { label: usize, n_classes: usize },

    #[error("divergence at step {step}: non-finite loss")]
    Divergence { step: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("fit error: {0}")]
    Fit(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
