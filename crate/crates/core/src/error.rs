use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("ill-conditioned system (condition estimate {condition:.3e} exceeds {ceiling:.1e})")]
    IllConditioned { condition: f64, ceiling: f64 },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("solver failed at bin {bin}: {source}")]
    AtBin {
        bin: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("SH fit of order {order} needs at least {required} directions, got {available}")]
    UnderdeterminedFit {
        order: usize,
        required: usize,
        available: usize,
    },

    #[error("{0}: position lies outside the room")]
    OutsideRoom(&'static str),

    #[error("insufficient energy decay: {0}")]
    InsufficientDecay(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("channel mismatch: left has {left} directions, right has {right}")]
    ChannelMismatch { left: usize, right: usize },

    #[error("incompatible provenance: {0}")]
    Provenance(String),

    #[error("stale or corrupted artifact: {0}")]
    Digest(String),

    #[error("config: {0}")]
    Config(String),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_bin(bin: usize, err: Error) -> Error {
        Error::AtBin {
            bin,
            source: Box::new(err),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
