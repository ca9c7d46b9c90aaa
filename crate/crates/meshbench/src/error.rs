//! Error type shared across the toolkit.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by mesh IO, registration, warping and the benchmark runner.
#[derive(Error, Debug)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{row}: {reason}")]
    Parse {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid landmarks: {0}")]
    InvalidLandmarks(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("warp plugin '{name}': {reason}")]
    Plugin { name: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
