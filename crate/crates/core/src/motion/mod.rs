//! Reference (pure Rust) motion operators: structure/detail decomposition,
//! backward bilinear warping and flow visualization. The tensor versions used
//! inside the codec are checked against these.

mod decompose;
mod map;
mod warp;

pub use decompose::{decompose_structure_detail, gaussian_kernel, StructureDetailPair, GAUSS_RADIUS, GAUSS_SIGMA};
pub use map::FeatureMap;
pub use warp::{flow_to_rgb, warp};

/// Per-pixel displacement fields for the structure and detail components.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    /// Two channels: horizontal then vertical displacement in pixels.
    pub flow_s: FeatureMap,
    pub flow_d: FeatureMap,
}

impl MotionField {
    pub fn zeros(width: usize, height: usize) -> Self {
        MotionField {
            flow_s: FeatureMap::zeros(2, height, width),
            flow_d: FeatureMap::zeros(2, height, width),
        }
    }

    /// Finite and bounded by the larger frame side.
    pub fn is_valid(&self) -> bool {
        let bound = self.flow_s.width.max(self.flow_s.height) as f32;
        [&self.flow_s, &self.flow_d]
            .iter()
            .all(|f| f.data.iter().all(|v| v.is_finite() && v.abs() <= bound))
    }
}
