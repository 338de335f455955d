//! Spatial dependency networks: gated directional sweeps over feature maps,
//! a vanilla VAE with an SDN decoder, and the data, metrics and training
//! machinery around them.

pub mod config;
pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod numerics;
pub mod params;
pub mod rng;
pub mod train;
pub mod vae;

pub use error::{Error, Result};
pub use numerics::{Graph, Tensor, Var};

/// Working float precision. 64-bit unless the `f32` feature is enabled.
#[cfg(not(feature = "f32"))]
pub type Float = f64;
#[cfg(feature = "f32")]
pub type Float = f32;
