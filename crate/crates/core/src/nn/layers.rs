//! Building blocks shared by all coding parts.

use candle_core::{DType, Tensor, D};

use super::ops::{conv2d, leaky_relu, pixel_shuffle, pixel_unshuffle};
use super::params::{Init, ParamPath};
use crate::config::{ArchKind, AttentionConfig};
use crate::error::Result;

pub struct Conv {
    w: Tensor,
    b: Tensor,
    stride: usize,
    pad: usize,
}

impl Conv {
    pub fn new(p: &mut ParamPath, ci: usize, co: usize, k: usize, stride: usize) -> Result<Self> {
        Self::with_init(p, ci, co, k, stride, Init::Lecun { fan_in: ci * k * k })
    }

    /// Zero weights and bias: the layer starts as the constant 0.
    pub fn zeros(p: &mut ParamPath, ci: usize, co: usize, k: usize) -> Result<Self> {
        Self::with_init(p, ci, co, k, 1, Init::Zeros)
    }

    fn with_init(p: &mut ParamPath, ci: usize, co: usize, k: usize, stride: usize, init: Init) -> Result<Self> {
        let w = p.var("weight", &[co, ci, k, k], init)?;
        let b = p.var("bias", &[co], Init::Zeros)?;
        Ok(Conv { w, b, stride, pad: k / 2 })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.w, Some(&self.b), self.stride, self.pad)
    }
}

/// Affine map over the last axis.
pub struct Linear {
    w: Tensor,
    b: Tensor,
}

impl Linear {
    pub fn new(p: &mut ParamPath, ci: usize, co: usize) -> Result<Self> {
        Self::with_init(p, ci, co, Init::Lecun { fan_in: ci })
    }

    pub fn zeros(p: &mut ParamPath, ci: usize, co: usize) -> Result<Self> {
        Self::with_init(p, ci, co, Init::Zeros)
    }

    fn with_init(p: &mut ParamPath, ci: usize, co: usize, init: Init) -> Result<Self> {
        let w = p.var("weight", &[co, ci], init)?;
        let b = p.var("bias", &[co], Init::Zeros)?;
        Ok(Linear { w, b })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut dims = x.dims().to_vec();
        let ci = dims.pop().unwrap_or(1);
        let n: usize = dims.iter().product();
        let y = x.contiguous()?.reshape((n, ci))?.matmul(&self.w.t()?)?.broadcast_add(&self.b)?;
        dims.push(self.w.dim(0)?);
        Ok(y.reshape(dims)?)
    }
}

/// Normalization over the last axis with a learned affine.
pub struct LayerNorm {
    g: Tensor,
    b: Tensor,
}

impl LayerNorm {
    pub fn new(p: &mut ParamPath, c: usize) -> Result<Self> {
        Ok(LayerNorm { g: p.var("gain", &[c], Init::Const(1.0))?, b: p.var("bias", &[c], Init::Zeros)? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mu = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mu)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let y = xc.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(y.broadcast_mul(&self.g)?.broadcast_add(&self.b)?)
    }
}

/// conv → leaky ReLU → conv, plus the input. The second conv starts at zero
/// so a fresh block is the identity.
pub struct ResBlock {
    c1: Conv,
    c2: Conv,
}

impl ResBlock {
    pub fn new(p: &mut ParamPath, c: usize) -> Result<Self> {
        Ok(ResBlock { c1: Conv::new(&mut p.pp("c1"), c, c, 3, 1)?, c2: Conv::zeros(&mut p.pp("c2"), c, c, 3)? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = leaky_relu(&self.c1.forward(x)?)?;
        Ok((x + self.c2.forward(&h)?)?)
    }
}

/// Largest window not above `want` that tiles an `h`×`w` map.
pub fn fit_window(want: usize, h: usize, w: usize) -> usize {
    let mut ws = want.max(1);
    while ws > 1 && (h % ws != 0 || w % ws != 0) {
        ws /= 2;
    }
    ws
}

/// Shifted-window self-attention layer working on NCHW maps.
pub struct SwinLayer {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    /// `(2W-1)^2` rows, one column per head.
    rel_bias: Tensor,
    window: usize,
    heads: usize,
    shifted: bool,
}

impl SwinLayer {
    pub fn new(p: &mut ParamPath, c: usize, cfg: &AttentionConfig, shifted: bool) -> Result<Self> {
        let span = 2 * cfg.window - 1;
        Ok(SwinLayer {
            ln1: LayerNorm::new(&mut p.pp("ln1"), c)?,
            qkv: Linear::new(&mut p.pp("qkv"), c, 3 * c)?,
            proj: Linear::zeros(&mut p.pp("proj"), c, c)?,
            ln2: LayerNorm::new(&mut p.pp("ln2"), c)?,
            fc1: Linear::new(&mut p.pp("fc1"), c, 2 * c)?,
            fc2: Linear::zeros(&mut p.pp("fc2"), 2 * c, c)?,
            rel_bias: p.var("rel_bias", &[span * span, cfg.heads], Init::Uniform(-0.02, 0.02))?,
            window: cfg.window,
            heads: cfg.heads,
            shifted,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let ws = fit_window(self.window, h, w);
        let shift = if self.shifted && ws > 1 && (ws < h || ws < w) { ws / 2 } else { 0 };
        let t = x.permute((0, 2, 3, 1))?; // b h w c
        let a = self.ln1.forward(&t)?;
        let a = if shift > 0 { a.roll(-(shift as i32), 1)?.roll(-(shift as i32), 2)? } else { a };
        let a = self.attend(&a, ws, shift)?;
        let a = if shift > 0 { a.roll(shift as i32, 1)?.roll(shift as i32, 2)? } else { a };
        let t = (t + a)?;
        let m = self.fc2.forward(&self.fc1.forward(&self.ln2.forward(&t)?)?.gelu()?)?;
        let t = (t + m)?;
        Ok(t.permute((0, 3, 1, 2))?.contiguous()?)
    }

    fn attend(&self, x: &Tensor, ws: usize, shift: usize) -> Result<Tensor> {
        let (b, h, w, c) = x.dims4()?;
        let (nh, hd) = (self.heads, c / self.heads);
        let (wy, wx) = (h / ws, w / ws);
        let nw = wy * wx;
        let n = ws * ws;
        // b, wy, ws, wx, ws, c -> (b*nw), n, c
        let win = x.reshape((b, wy, ws, wx, ws, c))?.permute((0, 1, 3, 2, 4, 5))?.reshape((b * nw, n, c))?;
        let qkv = self.qkv.forward(&win)?.reshape((b * nw, n, 3, nh, hd))?.permute((2, 0, 3, 1, 4))?;
        let q = (qkv.get(0)?.contiguous()? * (1.0 / (hd as f64).sqrt()))?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let mut s = q.matmul(&k.t()?)?; // (b*nw, nh, n, n)
        s = s.broadcast_add(&self.relative_bias(ws)?)?;
        if shift > 0 {
            let mask = shift_mask(h, w, ws, shift, x.device())?; // (nw, n, n)
            s = s
                .reshape((b, nw, nh, n, n))?
                .broadcast_add(&mask.unsqueeze(1)?.unsqueeze(0)?)?
                .reshape((b * nw, nh, n, n))?;
        }
        let attn = candle_nn::ops::softmax_last_dim(&s)?;
        let o = attn.matmul(&v)?.permute((0, 2, 1, 3))?.reshape((b * nw, n, c))?;
        let o = self.proj.forward(&o)?;
        Ok(o.reshape((b, wy, wx, ws, ws, c))?.permute((0, 1, 3, 2, 4, 5))?.reshape((b, h, w, c))?)
    }

    fn relative_bias(&self, ws: usize) -> Result<Tensor> {
        let span = 2 * self.window - 1;
        let r = self.window as isize - 1;
        let n = ws * ws;
        let mut idx = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let dy = (i / ws) as isize - (j / ws) as isize + r;
                let dx = (i % ws) as isize - (j % ws) as isize + r;
                idx.push((dy as usize * span + dx as usize) as u32);
            }
        }
        let idx = Tensor::from_vec(idx, n * n, self.rel_bias.device())?;
        Ok(self.rel_bias.index_select(&idx, 0)?.reshape((n, n, self.heads))?.permute((2, 0, 1))?)
    }
}

/// −100 between tokens that came from different regions before the cyclic
/// shift, 0 otherwise.
fn shift_mask(h: usize, w: usize, ws: usize, shift: usize, dev: &candle_core::Device) -> Result<Tensor> {
    let region = |i: usize, len: usize| {
        if i < len - ws {
            0
        } else if i < len - shift {
            1
        } else {
            2
        }
    };
    let (wy, wx) = (h / ws, w / ws);
    let n = ws * ws;
    let mut m = Vec::with_capacity(wy * wx * n * n);
    for by in 0..wy {
        for bx in 0..wx {
            let labels: Vec<usize> = (0..n)
                .map(|t| {
                    let (y, x) = (by * ws + t / ws, bx * ws + t % ws);
                    region(y, h) * 3 + region(x, w)
                })
                .collect();
            for i in 0..n {
                for j in 0..n {
                    m.push(if labels[i] == labels[j] { 0f32 } else { -100.0 });
                }
            }
        }
    }
    Ok(Tensor::from_vec(m, (wy * wx, n, n), dev)?)
}

enum Block {
    Res(ResBlock),
    Swin(SwinLayer),
}

/// The arch-dependent body of a stage: residual blocks (cnn), residual
/// blocks each followed by attention layers (mixed), or attention layers
/// only (transformer).
pub struct Blocks(Vec<Block>);

impl Blocks {
    pub fn new(p: &mut ParamPath, c: usize, res: usize, arch: ArchKind, attn: &AttentionConfig) -> Result<Self> {
        let mut v = Vec::new();
        match arch {
            ArchKind::Cnn => {
                for i in 0..res {
                    v.push(Block::Res(ResBlock::new(&mut p.pp(format!("res{i}")), c)?));
                }
            }
            ArchKind::MixedCnnTransformer => {
                for i in 0..res {
                    v.push(Block::Res(ResBlock::new(&mut p.pp(format!("res{i}")), c)?));
                    for j in 0..attn.depth {
                        v.push(Block::Swin(SwinLayer::new(&mut p.pp(format!("swin{i}_{j}")), c, attn, j % 2 == 1)?));
                    }
                }
            }
            ArchKind::Transformer => {
                for i in 0..res * attn.depth {
                    v.push(Block::Swin(SwinLayer::new(&mut p.pp(format!("swin{i}")), c, attn, i % 2 == 1)?));
                }
            }
        }
        Ok(Blocks(v))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for b in &self.0 {
            x = match b {
                Block::Res(r) => r.forward(&x)?,
                Block::Swin(s) => s.forward(&x)?,
            };
        }
        Ok(x)
    }
}

/// Stride-2 downsampling: a 3×3 convolution, or patch merging for the
/// transformer kind.
pub enum Down {
    Conv(Conv),
    Merge(LayerNorm, Linear),
}

impl Down {
    pub fn new(p: &mut ParamPath, ci: usize, co: usize, arch: ArchKind) -> Result<Self> {
        Ok(match arch {
            ArchKind::Transformer => {
                Down::Merge(LayerNorm::new(&mut p.pp("ln"), 4 * ci)?, Linear::new(&mut p.pp("lin"), 4 * ci, co)?)
            }
            _ => Down::Conv(Conv::new(p, ci, co, 3, 2)?),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Down::Conv(c) => c.forward(x),
            Down::Merge(ln, lin) => {
                let t = pixel_unshuffle(x)?.permute((0, 2, 3, 1))?;
                Ok(lin.forward(&ln.forward(&t)?)?.permute((0, 3, 1, 2))?.contiguous()?)
            }
        }
    }
}

/// 2× upsampling: a 3×3 convolution to four times the channels followed by
/// pixel shuffle, or a linear patch split for the transformer kind.
pub enum Up {
    Conv(Conv),
    Split(Linear),
}

impl Up {
    pub fn new(p: &mut ParamPath, ci: usize, co: usize, arch: ArchKind) -> Result<Self> {
        Ok(match arch {
            ArchKind::Transformer => Up::Split(Linear::new(&mut p.pp("lin"), ci, 4 * co)?),
            _ => Up::Conv(Conv::new(p, ci, 4 * co, 3, 1)?),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Up::Conv(c) => pixel_shuffle(&c.forward(x)?),
            Up::Split(lin) => {
                let t = lin.forward(&x.permute((0, 2, 3, 1))?)?.permute((0, 3, 1, 2))?.contiguous()?;
                pixel_shuffle(&t)
            }
        }
    }
}

pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::Device;

    fn input(shape: &[usize]) -> Tensor {
        Tensor::randn(0f32, 1.0, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn fresh_residual_stacks_are_identity() {
        let attn = AttentionConfig { window: 4, heads: 2, depth: 2 };
        for arch in [ArchKind::Cnn, ArchKind::MixedCnnTransformer, ArchKind::Transformer] {
            let mut s = ParamStore::new(0);
            let b = Blocks::new(&mut s.root().pp("x"), 8, 2, arch, &attn).unwrap();
            let x = input(&[1, 8, 8, 8]);
            let y = b.forward(&x).unwrap();
            assert_eq!((x - y).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap(), 0.0);
        }
    }

    #[test]
    fn resampling_shapes() {
        for arch in [ArchKind::Cnn, ArchKind::Transformer] {
            let mut s = ParamStore::new(0);
            let mut r = s.root();
            let d = Down::new(&mut r.pp("d"), 6, 10, arch).unwrap();
            let u = Up::new(&mut r.pp("u"), 10, 5, arch).unwrap();
            let y = d.forward(&input(&[2, 6, 8, 12])).unwrap();
            assert_eq!(y.dims(), &[2, 10, 4, 6]);
            assert_eq!(u.forward(&y).unwrap().dims(), &[2, 5, 8, 12]);
        }
    }

    #[test]
    fn swin_windows_and_masks() {
        assert_eq!(fit_window(8, 4, 4), 4);
        assert_eq!(fit_window(8, 16, 24), 8);
        assert_eq!(fit_window(8, 6, 6), 2);
        let m = shift_mask(8, 8, 4, 2, &Device::Cpu).unwrap();
        // the top-left window never straddles a shifted seam
        assert_eq!(m.get(0).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap(), 0.0);
        assert!(m.get(3).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap() > 0.0);
        // a trained-looking layer keeps the shape and stays finite
        let mut s = ParamStore::new(1);
        let attn = AttentionConfig { window: 8, heads: 2, depth: 1 };
        let l = SwinLayer::new(&mut s.root().pp("s"), 8, &attn, true).unwrap();
        for v in s.vars().values() {
            v.set(&Tensor::randn(0f32, 0.2, v.dims(), &Device::Cpu).unwrap()).unwrap();
        }
        let y = l.forward(&input(&[1, 8, 16, 8])).unwrap();
        assert_eq!(y.dims(), &[1, 8, 16, 8]);
        assert!(to_f64_vec(&y).unwrap().iter().all(|v| v.is_finite()));
    }
}
