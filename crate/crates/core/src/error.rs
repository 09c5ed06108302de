use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("AMP diverged at iteration {iteration}: non-finite state")]
    Divergence { iteration: usize },

    #[error("rank-deficient active set: column {column} is linearly dependent on the support")]
    RankDeficient { column: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("signal power is zero; SNR of {snr_db} dB is undefined")]
    ZeroSignal { snr_db: f64 },

    #[error("reference channel is all zero; NMSE is undefined")]
    ZeroTruth,

    #[error("path {index} does not lie on the angular grid")]
    OffGrid { index: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("pruning would remove every channel of conv layer {layer}")]
    LayerEmptied { layer: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("I/O error on {path}: {source}")]
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
}
