use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("singular transform (|det| = {det:e})")]
    SingularTransform { det: f64 },

    #[error("degenerate target shape {0:?}")]
    DegenerateShape([usize; 3]),

    #[error("zero variance (std = {std:e})")]
    ZeroVariance { std: f64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("pad target {target:?} smaller than shape {shape:?}")]
    PadTooSmall { target: [usize; 3], shape: [usize; 3] },

    #[error("degenerate orientation matrix")]
    DegenerateOrientation,

    #[error("bad NIfTI magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("truncated NIfTI payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("bad NIfTI header: {0}")]
    BadHeader(String),

    #[error("disjoint world extents")]
    DisjointExtents,

    #[error("inference failed for flip axes {axes:?}: {message}")]
    Inference { axes: [bool; 3], message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("manifest entry `{id}`: {message}")]
    Manifest { id: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
