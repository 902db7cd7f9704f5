//! Shared primitives: vectors, cameras, image buffers, deterministic RNG,
//! and the binary tensor file format.
//!
//! Everything here is immutable after construction and safe to share across
//! parallel workers. All radiometry is linear; sRGB is applied only when
//! exporting PNG previews.

pub mod camera;
pub mod error;
pub mod image;
pub mod math;
pub mod rng;
pub mod tensor;

pub use camera::Camera;
pub use error::{Error, Result};
pub use image::ImageBuffer;
pub use math::{srgb_decode, srgb_encode, Mat3, Ray, Vec3};
pub use rng::Rng;
pub use tensor::{tensor_read, tensor_write, Tensor};
