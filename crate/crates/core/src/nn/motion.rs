//! Flow estimation and the motion encoder-decoder.

use candle_core::{DType, Tensor};

use super::layers::{Blocks, Conv, Down, Up};
use super::ops::{avg_pool2, decompose, leaky_relu, upsample_nearest2, warp};
use super::params::ParamPath;
use crate::config::{ArchKind, AttentionConfig};
use crate::error::{NvcError, Result};

pub const FLOW_LEVELS: usize = 3;

struct LevelNet(Conv, Conv, Conv);

impl LevelNet {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = leaky_relu(&self.0.forward(x)?)?;
        let h = leaky_relu(&self.1.forward(&h)?)?;
        self.2.forward(&h)
    }
}

/// Coarse-to-fine residual flow estimation over a three-level average
/// pyramid. The same per-level nets serve the structure and the detail
/// components.
pub struct FlowNet {
    levels: Vec<LevelNet>,
}

impl FlowNet {
    pub fn new(p: &mut ParamPath, channels: usize) -> Result<Self> {
        let mut levels = Vec::new();
        for l in 0..FLOW_LEVELS {
            let mut lp = p.pp(format!("level{l}"));
            levels.push(LevelNet(
                Conv::new(&mut lp.pp("c0"), 8, channels, 3, 1)?,
                Conv::new(&mut lp.pp("c1"), channels, channels, 3, 1)?,
                Conv::zeros(&mut lp.pp("c2"), channels, 2, 3)?,
            ));
        }
        Ok(FlowNet { levels })
    }

    /// Flow that backward-warps `reference` onto `cur`.
    pub fn estimate_component(&self, cur: &Tensor, reference: &Tensor) -> Result<Tensor> {
        if cur.dims() != reference.dims() {
            return Err(NvcError::DimMismatch(format!("{:?} vs {:?}", cur.dims(), reference.dims())));
        }
        let (b, _, h, w) = cur.dims4()?;
        let scale = 1 << (FLOW_LEVELS - 1);
        if h % scale != 0 || w % scale != 0 {
            return Err(NvcError::ShapeMismatch(format!("{w}x{h} is not divisible by {scale}")));
        }
        let mut curs = vec![cur.clone()];
        let mut refs = vec![reference.clone()];
        for _ in 1..FLOW_LEVELS {
            curs.push(avg_pool2(curs.last().unwrap())?);
            refs.push(avg_pool2(refs.last().unwrap())?);
        }
        let mut flow = Tensor::zeros((b, 2, h / scale, w / scale), cur.dtype(), cur.device())?;
        for l in (0..FLOW_LEVELS).rev() {
            if l + 1 < FLOW_LEVELS {
                flow = (upsample_nearest2(&flow)? * 2.0)?;
            }
            let warped = warp(&refs[l], &flow)?;
            let delta = self.levels[l].forward(&Tensor::cat(&[&warped, &curs[l], &flow], 1)?)?;
            flow = (flow + delta)?;
        }
        Ok(flow)
    }

    /// `(flow_s, flow_d)` for the structure and detail components.
    pub fn estimate(&self, cur: &Tensor, reference: &Tensor) -> Result<(Tensor, Tensor)> {
        let (cs, cd) = decompose(cur)?;
        let (rs, rd) = decompose(reference)?;
        Ok((self.estimate_component(&cs, &rs)?, self.estimate_component(&cd, &rd)?))
    }
}

/// Warp of the reference by decoded motion: each component by its own flow.
pub fn motion_compensate(reference: &Tensor, flow_s: &Tensor, flow_d: &Tensor) -> Result<Tensor> {
    let (s, d) = decompose(reference)?;
    Ok((warp(&s, flow_s)? + warp(&d, flow_d)?)?)
}

pub struct MotionEncoder {
    stages: Vec<(Down, Option<Blocks>)>,
}

pub struct MotionDecoder {
    stages: Vec<(Up, Option<Blocks>)>,
    out: Conv,
}

impl MotionEncoder {
    pub fn new(p: &mut ParamPath, channels: usize, res_blocks: usize, latent: usize) -> Result<Self> {
        let attn = AttentionConfig::default();
        let mut stages = Vec::new();
        for i in 0..4 {
            let ci = if i == 0 { 4 } else { channels };
            let co = if i == 3 { latent } else { channels };
            let down = Down::new(&mut p.pp(format!("down{i}")), ci, co, ArchKind::Cnn)?;
            let blocks = if i < 3 {
                Some(Blocks::new(&mut p.pp(format!("blocks{i}")), channels, res_blocks, ArchKind::Cnn, &attn)?)
            } else {
                None
            };
            stages.push((down, blocks));
        }
        Ok(MotionEncoder { stages })
    }

    /// `(v_s, v_d)` stacked to 4 channels in, latent at 1/16 out.
    pub fn forward(&self, flows: &Tensor) -> Result<Tensor> {
        check_divisible(flows, 16)?;
        let mut h = flows.clone();
        for (d, b) in &self.stages {
            h = d.forward(&h)?;
            if let Some(b) = b {
                h = b.forward(&leaky_relu(&h)?)?;
            }
        }
        Ok(h)
    }
}

impl MotionDecoder {
    pub fn new(p: &mut ParamPath, channels: usize, res_blocks: usize, latent: usize) -> Result<Self> {
        let attn = AttentionConfig::default();
        let mut stages = Vec::new();
        for i in 0..4 {
            let ci = if i == 0 { latent } else { channels };
            let up = Up::new(&mut p.pp(format!("up{i}")), ci, channels, ArchKind::Cnn)?;
            let blocks = if i < 3 {
                Some(Blocks::new(&mut p.pp(format!("blocks{i}")), channels, res_blocks, ArchKind::Cnn, &attn)?)
            } else {
                None
            };
            stages.push((up, blocks));
        }
        Ok(MotionDecoder { stages, out: Conv::new(&mut p.pp("out"), channels, 4, 3, 1)? })
    }

    /// Decoded `(v̂_s, v̂_d)`.
    pub fn forward(&self, latent: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut h = latent.clone();
        for (u, b) in &self.stages {
            h = leaky_relu(&u.forward(&h)?)?;
            if let Some(b) = b {
                h = b.forward(&h)?;
            }
        }
        let v = self.out.forward(&h)?;
        Ok((v.narrow(1, 0, 2)?, v.narrow(1, 2, 2)?))
    }
}

pub fn check_divisible(x: &Tensor, m: usize) -> Result<()> {
    let (_, _, h, w) = x.dims4()?;
    if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
        return Err(NvcError::ShapeMismatch(format!("{w}x{h} input is not a multiple of {m}")));
    }
    Ok(())
}

pub fn zeros_like_dims(like: &Tensor, c: usize, h: usize, w: usize) -> Result<Tensor> {
    Ok(Tensor::zeros((like.dim(0)?, c, h, w), DType::F32, like.device())?)
}
