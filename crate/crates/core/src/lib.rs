//! Coordinate-quantized variational auto-encoders for shape regression
//! with calibrated uncertainty.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations. Training runs in `f32`, gradient
//! checks in `f64`.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod matching;
pub mod metrics;
pub mod models;
pub mod params;
pub mod quantize;
pub mod rng;
pub mod scalar;
pub mod shape;
pub mod tensor;

pub use autodiff::{Gradients, Graph, Var};
pub use config::TrainConfig;
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use shape::Shape;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type CqVae32 = models::CqVae<f32>;
pub type CqVae64 = models::CqVae<f64>;
pub type CqAe32 = models::CqAe<f32>;
pub type CqAe64 = models::CqAe<f64>;
