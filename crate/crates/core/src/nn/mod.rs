//! The learned codec: tensor operators, layers, the five coding parts plus
//! the intra codec, bitstream-producing inference and the training loop.

pub mod checkpoint;
pub mod codec;
pub mod contextual;
pub mod entropy;
pub mod eval;
pub mod job;
pub mod layers;
pub mod model;
pub mod motion;
pub mod ops;
pub mod params;
pub mod sweep;
pub mod tcm;
pub mod training;

pub use params::{Init, ParamPath, ParamStore};
