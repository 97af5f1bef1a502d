//! Conditional neural video coding with a configurable, scalable codec family.
//!
//! The crate splits into a pure-Rust layer (configuration, I/O, reference
//! motion operators, entropy math, the range coder, the bitstream format,
//! metrics and training arithmetic) and, behind the default `nn` feature, the
//! tensor-based codec: model construction, training and end-to-end
//! encoding/decoding.

pub mod bitstream;
pub mod coder;
pub mod config;
pub mod data;
pub mod entropy;
pub mod error;
pub mod metrics;
pub mod motion;
pub mod train;

#[cfg(feature = "nn")]
pub mod nn;

pub use config::{ArchKind, ModelConfig, SweepAxis};
pub use error::{NvcError, Result};

/// The four base rate-distortion trade-offs, one model per value.
pub const LAMBDAS: [f64; 4] = [85.0, 170.0, 380.0, 840.0];
