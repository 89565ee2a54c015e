//! Tensor engine, layers and the two networks: the dense encoder-decoder
//! segmentor and the geodesic autoencoder.

pub mod checkpoint;
pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod models;
pub mod optim;
pub mod params;
pub mod real;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use layers::{DenseBlockConfig, Mode};
pub use models::{Gae, GaeConfig, Segmentor, SegmentorConfig};
pub use optim::Adam;
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use tensor::{Shape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type Segmentor32 = Segmentor<f32>;
pub type Segmentor64 = Segmentor<f64>;
pub type Gae32 = Gae<f32>;
pub type Gae64 = Gae<f64>;
