use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad config: {0}")]
    Config(String),
    #[error("missing stage `{stage}`: {detail}")]
    MissingStage { stage: &'static str, detail: String },
    #[error("stale pipeline: {0}")]
    Stale(String),
    #[error(transparent)]
    Core(#[from] geoprior_core::Error),
    #[error(transparent)]
    Nn(#[from] geoprior_nn::Error),
    #[error(transparent)]
    Train(#[from] geoprior_train::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    /// 2 bad config, 3 missing or stale upstream stage, 4 numerical failure,
    /// 1 anything else (I/O, corrupt files).
    pub fn exit_code(&self) -> i32 {
        use geoprior_train::Error as T;
        match self {
            Error::Config(_) => 2,
            Error::MissingStage { .. } | Error::Stale(_) => 3,
            Error::Train(T::Config(_)) | Error::Nn(geoprior_nn::Error::Config(_)) => 2,
            Error::Train(T::MissingStage(_)) => 3,
            Error::Train(T::Diverged { .. } | T::GaeMutated | T::Nn(geoprior_nn::Error::NonFinite(_))) => 4,
            Error::Nn(geoprior_nn::Error::NonFinite(_)) | Error::Core(geoprior_core::Error::NonFinite(_)) => 4,
            Error::Core(geoprior_core::Error::InvalidParameter(_)) => 2,
            _ => 1,
        }
    }
}
