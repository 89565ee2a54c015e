//! Stage-wise experiment pipeline behind the `geoprior` binary:
//! synth, corrupt, geodesic, train-gae, train-seg, eval, report.
//!
//! Each stage writes a `manifest.json` holding its config, seed, the hashes
//! of its inputs and a hash of its own outputs. Downstream stages refuse to
//! run on missing or modified upstream outputs.

pub mod error;
pub mod manifest;
pub mod pool;
pub mod report;
pub mod scores;
pub mod stages;
pub mod svg;

pub use error::{Error, Result};
