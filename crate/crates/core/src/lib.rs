pub mod eikonal;
pub mod geodesic;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod morphology;
pub mod noise;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{Class, Dims, Grid, LabelMap, Mask, MultiChannelMap, Spacing, Volume};
pub use scalar::Scalar;
