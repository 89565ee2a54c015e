//! Two-phase training: the prior autoencoder first, then the segmentor with
//! the coupled loss, plus evaluation on clean labels.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gae;
pub mod logs;
pub mod losses;
pub mod schedule;
pub mod seeds;
pub mod segment;

pub use config::{EarlyStopping, LabelSource, PriorMode, TrainConfig};
pub use error::{Error, Result};
pub use gae::{train_gae, TrainedGae};
pub use losses::total_loss;
pub use schedule::Control;
pub use seeds::derive_seed;
pub use segment::{train_segmentor, TrainedSegmentor};
