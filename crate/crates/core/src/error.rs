use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index ({x}, {y}, {z}) out of bounds for grid {dims:?}")]
    OutOfBounds {
        x: usize,
        y: usize,
        z: usize,
        dims: [usize; 3],
    },
    #[error("dimension mismatch: {0}")]
    DimsMismatch(String),
    #[error("invalid spacing {0:?}: every component must be positive and finite")]
    InvalidSpacing([f64; 3]),
    #[error("non-finite value at linear index {0}")]
    NonFinite(usize),
    #[error("invalid class id {value} at linear index {index}")]
    InvalidLabel { index: usize, value: u8 },
    #[error("malformed volume file: {0}")]
    Format(String),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("mask is empty")]
    EmptyMask,
    #[error("seed set is empty")]
    EmptySeeds,
    #[error("seed ({0}, {1}, {2}) lies outside the domain")]
    SeedOutsideDomain(usize, usize, usize),
    #[error("no accepted neighbor available for the upwind update")]
    NoAcceptedNeighbor,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("phantom geometry cannot fit: {0}")]
    GeometryDoesNotFit(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
