//! G-NeLF: a neural light field built from a hash-based multi-resolution
//! tri-plane feature grid and a recurrent ray color decoder.
//!
//! A ray is clipped to the scene box, sampled at `K` ordered depths, each
//! sample is encoded by the tri-plane, and the resulting feature sequence is
//! decoded to RGB by a stacked LSTM. All numeric code is generic over
//! [`Scalar`] (f32 or f64); the aliases below name the common instantiations.

pub mod dataio;
pub mod decoder;
pub mod error;
pub mod frame;
pub mod geometry;
pub mod gridenc;
pub mod optim;
pub mod pipeline;
pub mod scalar;

pub use error::{Error, Result};
pub use frame::Image;
pub use scalar::Scalar;

pub type Vec3f = geometry::Vec3<f32>;
pub type Rayf = geometry::Ray<f32>;
pub type Posef = geometry::Pose<f32>;
pub type Aabbf = geometry::Aabb<f32>;
pub type HashTriPlaneF32 = gridenc::HashTriPlane<f32>;
pub type HashTriPlaneF64 = gridenc::HashTriPlane<f64>;
pub type RayColorDecoderF32 = decoder::RayColorDecoder<f32>;
pub type RayColorDecoderF64 = decoder::RayColorDecoder<f64>;
pub type GNelfF32 = pipeline::GNelf<f32>;
pub type GNelfF64 = pipeline::GNelf<f64>;
