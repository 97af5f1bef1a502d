//! Video ingestion, color conversion, padding and training-clip sampling.

pub mod color;
mod frame;
mod io;
mod manifest;
mod sampler;
pub mod synthetic;

pub use color::{rgb_to_yuv, yuv_to_rgb};
pub use frame::{ColorSpace, Frame, VideoSequence, Yuv420Planes};
pub use io::{crop_to, pad_to_multiple, read_png, read_yuv420, write_png, write_yuv420};
pub use manifest::{DatasetManifest, SequenceEntry, SequenceFormat, MANIFEST_FILE};
pub use sampler::{Clip, ClipOrigin, ClipSampler};

/// Spatial alignment of the codec: latents sit at 1/16 and hyper-latents at
/// a further 1/4.
pub const PAD_MULTIPLE: usize = 64;
