use crate::data::{ColorSpace, Frame};

/// A planar C x H x W float map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        FeatureMap {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn constant_flow(height: usize, width: usize, dx: f32, dy: f32) -> Self {
        Self::from_fn(2, height, width, |c, _, _| if c == 0 { dx } else { dy })
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f32 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn zip_with(&self, other: &FeatureMap, f: impl Fn(f32, f32) -> f32) -> FeatureMap {
        assert_eq!(
            (self.channels, self.height, self.width),
            (other.channels, other.height, other.width)
        );
        FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|&v| v as f64 * v as f64).sum()
    }
}

impl From<&Frame> for FeatureMap {
    fn from(f: &Frame) -> Self {
        FeatureMap {
            channels: 3,
            height: f.height(),
            width: f.width(),
            data: f.data().to_vec(),
        }
    }
}

impl FeatureMap {
    /// Clamps into [0, 1] and reinterprets the first three channels as RGB.
    pub fn to_frame(&self) -> Frame {
        assert!(self.channels >= 3);
        let n = self.height * self.width;
        let data = self.data[..3 * n].iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Frame::from_planar(self.width, self.height, data, ColorSpace::Rgb).expect("three planes")
    }
}
