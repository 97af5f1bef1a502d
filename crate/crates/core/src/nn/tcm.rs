//! Temporal context mining: feature pyramid, motion-compensated raw
//! contexts, the ConvLSTM long-term reference and top-down fusion.

use candle_core::Tensor;

use super::layers::{Blocks, Conv, Down};
use super::ops::{avg_pool2, leaky_relu, sigmoid, warp};
use super::params::ParamPath;
use crate::config::{ArchKind, AttentionConfig, TcmConfig};
use crate::error::{NvcError, Result};

pub const SCALES: usize = 3;

/// Hidden and cell maps of the recurrent reference, `C_F` channels each.
#[derive(Clone)]
pub struct LongTerm {
    pub hidden: Tensor,
    pub cell: Tensor,
}

impl LongTerm {
    pub fn zeros(like_feature: &Tensor) -> Result<Self> {
        Ok(LongTerm { hidden: like_feature.zeros_like()?, cell: like_feature.zeros_like()? })
    }

    pub fn detach(&self) -> Self {
        LongTerm { hidden: self.hidden.detach(), cell: self.cell.detach() }
    }
}

pub struct Tcm {
    n: usize,
    cf: usize,
    pyr_in: (Conv, Blocks),
    pyr_down: Vec<(Down, Blocks)>,
    refine: Vec<Blocks>,
    /// 1x1 maps from the internal width to the context width, present
    /// only when the two differ.
    proj: Vec<Conv>,
    lstm: Conv,
    fuse: Vec<(Conv, Conv)>,
}

impl Tcm {
    pub fn new(p: &mut ParamPath, cfg: &TcmConfig, arch: ArchKind, attn: &AttentionConfig) -> Result<Self> {
        let (n, w, cf, rb) = (cfg.channels, cfg.width(), cfg.feature_channels, cfg.res_blocks);
        let pyr_in = (
            Conv::new(&mut p.pp("pyr0.in"), cf, w, 3, 1)?,
            Blocks::new(&mut p.pp("pyr0.blocks"), w, rb, arch, attn)?,
        );
        let mut pyr_down = Vec::new();
        for l in 1..SCALES {
            let (ci, co) = (w << (l - 1), w << l);
            pyr_down.push((
                Down::new(&mut p.pp(format!("pyr{l}.down")), ci, co, arch)?,
                Blocks::new(&mut p.pp(format!("pyr{l}.blocks")), co, rb, arch, attn)?,
            ));
        }
        let mut refine = Vec::new();
        let mut proj = Vec::new();
        let mut fuse = Vec::new();
        for l in 0..SCALES {
            let c = n << l;
            refine.push(Blocks::new(&mut p.pp(format!("refine{l}")), w << l, rb, arch, attn)?);
            if w != n {
                proj.push(Conv::new(&mut p.pp(format!("proj{l}")), w << l, c, 1, 1)?);
            }
            let extra = if l == 0 { cf } else { n << (l - 1) };
            fuse.push((
                Conv::new(&mut p.pp(format!("fuse{l}.0")), c + extra, c, 3, 1)?,
                Conv::zeros(&mut p.pp(format!("fuse{l}.1")), c, c, 3)?,
            ));
        }
        let lstm = Conv::new(&mut p.pp("lstm"), 2 * cf, 4 * cf, 3, 1)?;
        Ok(Tcm { n, cf, pyr_in, pyr_down, refine, proj, lstm, fuse })
    }

    /// Levels at full, 1/2 and 1/4 resolution with W, 2W and 4W channels.
    pub fn extract_pyramid(&self, feature: &Tensor) -> Result<Vec<Tensor>> {
        if feature.dim(1)? != self.cf {
            return Err(NvcError::ShapeMismatch(format!("reference feature has {} channels, expected {}", feature.dim(1)?, self.cf)));
        }
        let mut levels = vec![self.pyr_in.1.forward(&leaky_relu(&self.pyr_in.0.forward(feature)?)?)?];
        for (d, b) in &self.pyr_down {
            let h = b.forward(&leaky_relu(&d.forward(levels.last().unwrap())?)?)?;
            levels.push(h);
        }
        Ok(levels)
    }

    /// Warps each level, its first half of channels by the structure flow
    /// and the rest by the detail flow, then refines down to N, 2N and 4N
    /// channels.
    pub fn mine_contexts(&self, pyramid: &[Tensor], flow_s: &Tensor, flow_d: &Tensor) -> Result<Vec<Tensor>> {
        if pyramid.len() != SCALES {
            return Err(NvcError::ShapeMismatch(format!("{} pyramid levels, expected {SCALES}", pyramid.len())));
        }
        let (mut fs, mut fd) = (flow_s.clone(), flow_d.clone());
        let mut out = Vec::with_capacity(SCALES);
        for (l, level) in pyramid.iter().enumerate() {
            if l > 0 {
                fs = (avg_pool2(&fs)? * 0.5)?;
                fd = (avg_pool2(&fd)? * 0.5)?;
            }
            let c = level.dim(1)?;
            let half = c.div_ceil(2);
            let a = warp(&level.narrow(1, 0, half)?, &fs)?;
            let warped = if c > half { Tensor::cat(&[a, warp(&level.narrow(1, half, c - half)?, &fd)?], 1)? } else { a };
            let r = self.refine[l].forward(&warped)?;
            out.push(match self.proj.get(l) {
                Some(p) => p.forward(&r)?,
                None => r,
            });
        }
        Ok(out)
    }

    /// One ConvLSTM step fed with the latest reference feature.
    pub fn update_long_term(&self, state: &LongTerm, feature: &Tensor) -> Result<LongTerm> {
        if state.hidden.dims() != feature.dims() {
            return Err(NvcError::DimMismatch(format!("state {:?} vs feature {:?}", state.hidden.dims(), feature.dims())));
        }
        let gates = self.lstm.forward(&Tensor::cat(&[feature, &state.hidden], 1)?)?;
        let cf = self.cf;
        let i = sigmoid(&gates.narrow(1, 0, cf)?)?;
        let f = sigmoid(&gates.narrow(1, cf, cf)?)?;
        let o = sigmoid(&gates.narrow(1, 2 * cf, cf)?)?;
        let g = gates.narrow(1, 3 * cf, cf)?.tanh()?;
        let cell = ((f * &state.cell)? + (i * g)?)?;
        let hidden = (o * cell.tanh()?)?;
        Ok(LongTerm { hidden, cell })
    }

    /// Injects the hidden state at full resolution and carries the result
    /// down the scales.
    pub fn fuse_contexts(&self, raw: &[Tensor], hidden: &Tensor) -> Result<Vec<Tensor>> {
        let mut out: Vec<Tensor> = Vec::with_capacity(SCALES);
        for (l, c) in raw.iter().enumerate() {
            let side = if l == 0 { hidden.clone() } else { avg_pool2(&out[l - 1])? };
            let (f0, f1) = &self.fuse[l];
            let delta = f1.forward(&leaky_relu(&f0.forward(&Tensor::cat(&[c, &side], 1)?)?)?)?;
            out.push((c + delta)?);
        }
        Ok(out)
    }

    pub fn channels(&self) -> usize {
        self.n
    }

    /// The whole module: updated long-term state and fused contexts.
    pub fn forward(&self, feature: &Tensor, state: &LongTerm, flow_s: &Tensor, flow_d: &Tensor) -> Result<(Vec<Tensor>, LongTerm)> {
        let state = self.update_long_term(state, feature)?;
        let raw = self.mine_contexts(&self.extract_pyramid(feature)?, flow_s, flow_d)?;
        Ok((self.fuse_contexts(&raw, &state.hidden)?, state))
    }
}
