//! Contextual encoder-decoder conditioned on temporal contexts, and the
//! intra autoencoder used for I-frames.

use candle_core::Tensor;

use super::layers::{Blocks, Conv, Down, ResBlock, Up};
use super::motion::check_divisible;
use super::ops::leaky_relu;
use super::params::ParamPath;
use crate::config::{ArchKind, AttentionConfig, ContextualEncDecConfig, IntraConfig};
use crate::error::{NvcError, Result};

fn check_contexts(x: &Tensor, ctx: &[Tensor], n: usize) -> Result<()> {
    let (b, _, h, w) = x.dims4()?;
    if ctx.len() != 3 {
        return Err(NvcError::ShapeMismatch(format!("{} context scales, expected 3", ctx.len())));
    }
    for (l, c) in ctx.iter().enumerate() {
        let want = [b, n << l, h >> l, w >> l];
        if c.dims() != want {
            return Err(NvcError::ShapeMismatch(format!("context {l} is {:?}, expected {want:?}", c.dims())));
        }
    }
    Ok(())
}

pub struct ContextualEncoder {
    n: usize,
    downs: Vec<Down>,
    blocks: Vec<Blocks>,
}

impl ContextualEncoder {
    pub fn new(p: &mut ParamPath, cfg: &ContextualEncDecConfig, n: usize, arch: ArchKind, attn: &AttentionConfig) -> Result<Self> {
        let c = cfg.channels;
        let ins = [3 + n, c + 2 * n, c + 4 * n, c];
        let mut downs = Vec::new();
        let mut blocks = Vec::new();
        for (i, &ci) in ins.iter().enumerate() {
            let co = if i == 3 { cfg.latent_channels } else { c };
            downs.push(Down::new(&mut p.pp(format!("down{i}")), ci, co, arch)?);
            if i < 3 {
                blocks.push(Blocks::new(&mut p.pp(format!("blocks{i}")), c, cfg.res_blocks, arch, attn)?);
            }
        }
        Ok(ContextualEncoder { n, downs, blocks })
    }

    /// Frame plus contexts to the latent `y` at 1/16 resolution. Context
    /// scale `l` is concatenated at the input of stage `l`.
    pub fn forward(&self, x: &Tensor, ctx: &[Tensor]) -> Result<Tensor> {
        check_divisible(x, 16)?;
        check_contexts(x, ctx, self.n)?;
        let mut h = x.clone();
        for i in 0..3 {
            h = Tensor::cat(&[&h, &ctx[i]], 1)?;
            h = self.blocks[i].forward(&leaky_relu(&self.downs[i].forward(&h)?)?)?;
        }
        self.downs[3].forward(&h)
    }
}

pub struct ContextualDecoder {
    n: usize,
    ups: Vec<Up>,
    merges: Vec<Conv>,
    blocks: Vec<Blocks>,
    feature: ResBlock,
    out: Conv,
}

impl ContextualDecoder {
    pub fn new(
        p: &mut ParamPath,
        cfg: &ContextualEncDecConfig,
        n: usize,
        feature_channels: usize,
        arch: ArchKind,
        attn: &AttentionConfig,
    ) -> Result<Self> {
        let (c, cf) = (cfg.channels, feature_channels);
        let mut ups = Vec::new();
        for i in 0..4 {
            let ci = if i == 0 { cfg.latent_channels } else { c };
            let co = if i == 3 { cf } else { c };
            ups.push(Up::new(&mut p.pp(format!("up{i}")), ci, co, arch)?);
        }
        let merges = vec![
            Conv::new(&mut p.pp("merge2"), c + 4 * n, c, 3, 1)?,
            Conv::new(&mut p.pp("merge1"), c + 2 * n, c, 3, 1)?,
            Conv::new(&mut p.pp("merge0"), cf + n, cf, 3, 1)?,
        ];
        let mut blocks = Vec::new();
        for i in 0..3 {
            blocks.push(Blocks::new(&mut p.pp(format!("blocks{i}")), c, cfg.res_blocks, arch, attn)?);
        }
        Ok(ContextualDecoder {
            n,
            ups,
            merges,
            blocks,
            feature: ResBlock::new(&mut p.pp("feature"), cf)?,
            out: Conv::new(&mut p.pp("out"), cf, 3, 3, 1)?,
        })
    }

    /// Returns the unclamped frame and the reference feature `F̂` taken one
    /// layer before the RGB projection.
    pub fn forward(&self, y_hat: &Tensor, ctx: &[Tensor]) -> Result<(Tensor, Tensor)> {
        let (b, _, h, w) = y_hat.dims4()?;
        let full = Tensor::zeros((b, 3, h * 16, w * 16), y_hat.dtype(), y_hat.device())?;
        check_contexts(&full, ctx, self.n)?;
        let mut t = self.blocks[0].forward(&leaky_relu(&self.ups[0].forward(y_hat)?)?)?;
        t = leaky_relu(&self.ups[1].forward(&t)?)?;
        t = self.blocks[1].forward(&leaky_relu(&self.merges[0].forward(&Tensor::cat(&[&t, &ctx[2]], 1)?)?)?)?;
        t = leaky_relu(&self.ups[2].forward(&t)?)?;
        t = self.blocks[2].forward(&leaky_relu(&self.merges[1].forward(&Tensor::cat(&[&t, &ctx[1]], 1)?)?)?)?;
        t = leaky_relu(&self.ups[3].forward(&t)?)?;
        let f = self.feature.forward(&leaky_relu(&self.merges[2].forward(&Tensor::cat(&[&t, &ctx[0]], 1)?)?)?)?;
        Ok(((self.out.forward(&f)? + 0.5)?, f))
    }
}

/// Mean-scale hyperprior image autoencoder; the decoder also emits the
/// reference feature for the first P-frame.
pub struct IntraEncoder {
    downs: Vec<Down>,
    blocks: Vec<ResBlock>,
}

pub struct IntraDecoder {
    ups: Vec<Up>,
    blocks: Vec<ResBlock>,
    feature: ResBlock,
    out: Conv,
}

impl IntraEncoder {
    pub fn new(p: &mut ParamPath, cfg: &IntraConfig) -> Result<Self> {
        let c = cfg.channels;
        let mut downs = Vec::new();
        let mut blocks = Vec::new();
        for i in 0..4 {
            let ci = if i == 0 { 3 } else { c };
            let co = if i == 3 { cfg.latent_channels } else { c };
            downs.push(Down::new(&mut p.pp(format!("down{i}")), ci, co, ArchKind::Cnn)?);
            if i < 3 {
                blocks.push(ResBlock::new(&mut p.pp(format!("res{i}")), c)?);
            }
        }
        Ok(IntraEncoder { downs, blocks })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_divisible(x, 16)?;
        let mut h = x.clone();
        for i in 0..3 {
            h = self.blocks[i].forward(&leaky_relu(&self.downs[i].forward(&h)?)?)?;
        }
        self.downs[3].forward(&h)
    }
}

impl IntraDecoder {
    pub fn new(p: &mut ParamPath, cfg: &IntraConfig, feature_channels: usize) -> Result<Self> {
        let (c, cf) = (cfg.channels, feature_channels);
        let mut ups = Vec::new();
        let mut blocks = Vec::new();
        for i in 0..4 {
            let ci = if i == 0 { cfg.latent_channels } else { c };
            let co = if i == 3 { cf } else { c };
            ups.push(Up::new(&mut p.pp(format!("up{i}")), ci, co, ArchKind::Cnn)?);
            if i < 3 {
                blocks.push(ResBlock::new(&mut p.pp(format!("res{i}")), c)?);
            }
        }
        Ok(IntraDecoder {
            ups,
            blocks,
            feature: ResBlock::new(&mut p.pp("feature"), cf)?,
            out: Conv::new(&mut p.pp("out"), cf, 3, 3, 1)?,
        })
    }

    pub fn forward(&self, y_hat: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut h = y_hat.clone();
        for i in 0..3 {
            h = self.blocks[i].forward(&leaky_relu(&self.ups[i].forward(&h)?)?)?;
        }
        let f = self.feature.forward(&leaky_relu(&self.ups[3].forward(&h)?)?)?;
        Ok(((self.out.forward(&f)? + 0.5)?, f))
    }
}
