use crate::error::{NvcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColorSpace {
    Rgb,
    /// Y, Cb, Cr at full resolution (chroma upsampled from 4:2:0 when read
    /// from a planar file).
    Yuv,
}

/// Native 8-bit 4:2:0 planes, kept verbatim next to the float working copy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Yuv420Planes {
    pub width: usize,
    pub height: usize,
    pub y: Vec<u8>,
    pub u: Vec<u8>,
    pub v: Vec<u8>,
}

impl Yuv420Planes {
    pub fn chroma_dims(&self) -> (usize, usize) {
        (self.width / 2, self.height / 2)
    }

    pub fn byte_len(&self) -> usize {
        self.y.len() + self.u.len() + self.v.len()
    }
}

/// A frame of three planar channels with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    /// Planar, channel-major: `data[c * h * w + y * w + x]`.
    data: Vec<f32>,
    color_space: ColorSpace,
    native: Option<Box<Yuv420Planes>>,
}

impl Frame {
    pub fn from_planar(width: usize, height: usize, data: Vec<f32>, color_space: ColorSpace) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(NvcError::DimMismatch(format!(
                "{} samples for a {width}x{height}x3 frame",
                data.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            data,
            color_space,
            native: None,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let n = width * height;
        let mut data = Vec::with_capacity(3 * n);
        for v in rgb {
            data.extend(std::iter::repeat_n(v, n));
        }
        Frame {
            width,
            height,
            data,
            color_space: ColorSpace::Rgb,
            native: None,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Frame {
            width,
            height,
            data,
            color_space: ColorSpace::Rgb,
            native: None,
        }
    }

    pub(crate) fn with_native(mut self, planes: Yuv420Planes) -> Self {
        self.native = Some(Box::new(planes));
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn color_space(&self) -> ColorSpace {
        self.color_space
    }

    /// The 4:2:0 planes this frame was read from, if any.
    pub fn native_planes(&self) -> Option<&Yuv420Planes> {
        self.native.as_deref()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn is_valid(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    /// Copies a `w`x`h` window starting at `(x0, y0)`. Native planes are dropped.
    pub fn crop_region(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Frame> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(NvcError::DimMismatch(format!(
                "window {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(3 * w * h);
        for c in 0..3 {
            for y in y0..y0 + h {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + x0..row + x0 + w]);
            }
        }
        Ok(Frame {
            width: w,
            height: h,
            data,
            color_space: self.color_space,
            native: None,
        })
    }

    /// Largest absolute per-sample difference.
    pub fn max_abs_diff(&self, other: &Frame) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

#[derive(Debug, Clone)]
pub struct VideoSequence {
    pub name: String,
    pub fps: f64,
    frames: Vec<Frame>,
}

impl VideoSequence {
    pub fn new(name: impl Into<String>, fps: f64, frames: Vec<Frame>) -> Result<Self> {
        let name = name.into();
        if frames.len() < 2 {
            return Err(NvcError::Manifest(format!(
                "sequence `{name}` has {} frame(s), need at least 2",
                frames.len()
            )));
        }
        let dims = frames[0].dims();
        if let Some(bad) = frames.iter().position(|f| f.dims() != dims) {
            return Err(NvcError::DimMismatch(format!(
                "sequence `{name}` frame {bad} is {:?}, frame 0 is {dims:?}",
                frames[bad].dims()
            )));
        }
        Ok(VideoSequence { name, fps, frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    /// First `n` frames (or all of them).
    pub fn truncated(&self, n: usize) -> VideoSequence {
        let n = n.clamp(2.min(self.frames.len()), self.frames.len());
        VideoSequence {
            name: self.name.clone(),
            fps: self.fps,
            frames: self.frames[..n].to_vec(),
        }
    }

    pub fn map_frames(self, f: impl FnMut(Frame) -> Frame) -> VideoSequence {
        VideoSequence {
            name: self.name,
            fps: self.fps,
            frames: self.frames.into_iter().map(f).collect(),
        }
    }
}
