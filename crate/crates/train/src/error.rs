use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] geoprior_core::Error),
    #[error(transparent)]
    Nn(#[from] geoprior_nn::Error),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("missing stage: {0}")]
    MissingStage(String),
    #[error("{stage} diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged {
        stage: &'static str,
        epoch: usize,
        step: u64,
        loss: f64,
    },
    #[error("frozen autoencoder changed during segmentor training")]
    GaeMutated,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
