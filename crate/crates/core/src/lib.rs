//! CogAlign: adversarial alignment of textual and cognitive (eye-tracking / EEG)
//! input modalities for sequence labeling and sentence classification.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the default double precision.

pub mod adversarial;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod params;
pub mod predictors;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type Graph32 = autodiff::Graph<f32>;
