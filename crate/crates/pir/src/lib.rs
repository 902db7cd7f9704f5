//! Differentiable photometric inverse rendering.
//!
//! Reconstructs SDF geometry, spatially-varying roughplastic materials, and a
//! learnable point light (offset + intensity) from posed multi-view images lit
//! by a flashlight rigidly mounted near the camera. Self-shadows are modeled
//! with a soft visibility term, single-bounce inter-reflections with a
//! lobe-importance-sampled estimator gated by a learned blending scalar, and
//! material decomposition can be regularized by distilling per-pixel feature
//! maps onto the surface.
//!
//! The crate is organized bottom-up:
//! - [`core`]: math primitives, image buffers, deterministic RNG, tensor files
//! - [`fields`]: parametric spatial functions (grid / MLP) with hand-rolled
//!   value, spatial-gradient, and parameter-gradient evaluation
//! - [`geometry`]: sphere tracing, differentiable surface reparameterization,
//!   mesh extraction
//! - [`shading`]: point light, roughplastic BRDF, soft visibility, direct term
//! - [`interreflect`]: single-bounce indirect illumination
//! - [`volinit`]: volume-rendering initialization of geometry and albedo
//! - [`distill`]: surface feature-field distillation and injection
//! - [`losses`]: training losses and evaluation metrics
//! - [`trainer`]: staged optimization driver with Adam and checkpointing
//! - [`scenegen`]: synthetic dataset generator and brute-force reference
//!   renderer (the oracle the pipeline is validated against)

pub mod config;
pub mod core;
pub mod distill;
pub mod fields;
pub mod geometry;
pub mod interreflect;
pub mod losses;
pub mod numcheck;
pub mod render;
pub mod scenegen;
pub mod shading;
pub mod trainer;
pub mod volinit;

pub use crate::core::error::{Error, Result};
