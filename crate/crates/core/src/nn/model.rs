//! The assembled codec, parameter accounting and the differentiable
//! training-time forward passes.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::contextual::{ContextualDecoder, ContextualEncoder, IntraDecoder, IntraEncoder};
use super::entropy::{EntropyLayout, LatentEntropy};
use super::motion::{motion_compensate, FlowNet, MotionDecoder, MotionEncoder};
use super::params::ParamStore;
use super::tcm::{LongTerm, Tcm};
use crate::config::{ArchKind, ModelConfig, MODULE_NAMES};
use crate::data::{ColorSpace, Frame};
use crate::error::{NvcError, Result};

pub struct CodecModel {
    config: ModelConfig,
    store: ParamStore,
    pub flow: FlowNet,
    pub motion_enc: MotionEncoder,
    pub motion_dec: MotionDecoder,
    pub motion_entropy: LatentEntropy,
    pub tcm: Tcm,
    pub ctx_enc: ContextualEncoder,
    pub ctx_dec: ContextualDecoder,
    pub ctx_entropy: LatentEntropy,
    pub intra_enc: IntraEncoder,
    pub intra_dec: IntraDecoder,
    pub intra_entropy: LatentEntropy,
}

/// Builds every coding part with seeded initial weights.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<CodecModel> {
    config.validate()?;
    let cfg = config;
    let attn = &cfg.attention;
    let arch = cfg.arch_kind;
    let mut store = ParamStore::new(seed);
    let mut root = store.root();
    let flow = FlowNet::new(&mut root.pp("motion_estimation"), cfg.motion_estimation.channels)?;
    let med = &cfg.motion_enc_dec;
    let me = &cfg.motion_entropy;
    let motion_enc = MotionEncoder::new(&mut root.pp("motion_enc_dec").pp("enc"), med.channels, med.res_blocks, me.latent_channels)?;
    let motion_dec = MotionDecoder::new(&mut root.pp("motion_enc_dec").pp("dec"), med.channels, med.res_blocks, me.latent_channels)?;
    let motion_entropy = LatentEntropy::new(
        &mut root.pp("motion_entropy"),
        me.latent_channels,
        me.channels,
        me.hyper_channels,
        EntropyLayout { quadtree: true, latent_prior: true, temporal: None },
        ArchKind::Cnn,
        attn,
    )?;
    let tcm = Tcm::new(&mut root.pp("tcm"), &cfg.tcm, arch, attn)?;
    let n = cfg.tcm.channels;
    let ced = &cfg.contextual_enc_dec;
    let ctx_enc = ContextualEncoder::new(&mut root.pp("contextual_enc_dec").pp("enc"), ced, n, arch, attn)?;
    let ctx_dec = ContextualDecoder::new(&mut root.pp("contextual_enc_dec").pp("dec"), ced, n, cfg.tcm.feature_channels, arch, attn)?;
    let cem = &cfg.contextual_entropy;
    let ctx_entropy = LatentEntropy::new(
        &mut root.pp("contextual_entropy"),
        ced.latent_channels,
        cem.channels,
        cem.hyper_channels,
        EntropyLayout { quadtree: true, latent_prior: true, temporal: Some(4 * n) },
        arch,
        attn,
    )?;
    let ic = &cfg.intra;
    let intra_enc = IntraEncoder::new(&mut root.pp("intra").pp("enc"), ic)?;
    let intra_dec = IntraDecoder::new(&mut root.pp("intra").pp("dec"), ic, cfg.tcm.feature_channels)?;
    let intra_entropy = LatentEntropy::new(
        &mut root.pp("intra").pp("entropy"),
        ic.latent_channels,
        ic.channels,
        ic.hyper_channels,
        EntropyLayout { quadtree: false, latent_prior: false, temporal: None },
        ArchKind::Cnn,
        attn,
    )?;
    Ok(CodecModel {
        config: cfg.clone(),
        store,
        flow,
        motion_enc,
        motion_dec,
        motion_entropy,
        tcm,
        ctx_enc,
        ctx_dec,
        ctx_entropy,
        intra_enc,
        intra_dec,
        intra_entropy,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamReport {
    pub per_module: BTreeMap<String, usize>,
    pub total: usize,
}

impl ParamReport {
    /// Modules in report order.
    pub fn rows(&self) -> Vec<(&'static str, usize)> {
        MODULE_NAMES.iter().map(|m| (*m, self.per_module.get(*m).copied().unwrap_or(0))).collect()
    }
}

pub fn count_parameters(model: &CodecModel) -> ParamReport {
    let per_module: BTreeMap<String, usize> =
        MODULE_NAMES.iter().map(|m| (m.to_string(), model.store.count_in(m))).collect();
    let total = per_module.values().sum();
    debug_assert_eq!(total, model.store.total());
    ParamReport { per_module, total }
}

/// Parameters of a dense `k`×`k` convolution with bias.
pub fn conv_params(k: usize, ci: usize, co: usize) -> usize {
    k * k * ci * co + co
}

/// Everything a P-frame needs from the past.
#[derive(Clone)]
pub struct FrameState {
    /// Previous reconstruction `x̂_{t-1}`, `(1, 3, H, W)`.
    pub frame: Tensor,
    /// Reference feature `F̂_{t-1}`.
    pub feature: Tensor,
    pub long_term: LongTerm,
    /// Previous quantized motion latent (zeros after an intra frame).
    pub motion_prior: Tensor,
    /// Previous quantized contextual latent (zeros after an intra frame).
    pub context_prior: Tensor,
    /// 1-based P-frame index inside the GOP of the next frame.
    pub next_p_index: usize,
}

impl FrameState {
    pub fn detach(&self) -> FrameState {
        FrameState {
            frame: self.frame.detach(),
            feature: self.feature.detach(),
            long_term: self.long_term.detach(),
            motion_prior: self.motion_prior.detach(),
            context_prior: self.context_prior.detach(),
            next_p_index: self.next_p_index,
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.frame, &self.feature, &self.long_term.hidden, &self.long_term.cell, &self.motion_prior, &self.context_prior]
    }

    pub fn from_tensors(t: Vec<Tensor>, next_p_index: usize) -> Result<Self> {
        let [frame, feature, hidden, cell, motion_prior, context_prior]: [Tensor; 6] =
            t.try_into().map_err(|_| NvcError::ShapeMismatch("frame state has six tensors".into()))?;
        Ok(FrameState { frame, feature, long_term: LongTerm { hidden, cell }, motion_prior, context_prior, next_p_index })
    }
}

/// Differentiable per-frame results; rates are bits per pixel.
pub struct IntraPass {
    pub x_hat: Tensor,
    pub distortion: Tensor,
    pub rate: Tensor,
    pub state: FrameState,
}

pub struct InterPass {
    pub warped: Tensor,
    pub d_m: Tensor,
    pub r_m: Tensor,
    /// Present when the contextual path ran.
    pub recon: Option<ReconPass>,
    pub state: FrameState,
}

pub struct ReconPass {
    pub x_hat: Tensor,
    pub d_y: Tensor,
    pub r_y: Tensor,
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.sqr()?.mean_all()?)
}

impl CodecModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    /// State right after an intra frame with reconstruction `x_hat` and
    /// reference feature `feature`.
    pub fn reset_state(&self, x_hat: &Tensor, feature: &Tensor) -> Result<FrameState> {
        let (b, _, h, w) = x_hat.dims4()?;
        let (lh, lw) = (h / 16, w / 16);
        Ok(FrameState {
            frame: x_hat.clone(),
            feature: feature.clone(),
            long_term: LongTerm::zeros(feature)?,
            motion_prior: Tensor::zeros((b, self.config.motion_entropy.latent_channels, lh, lw), DType::F32, x_hat.device())?,
            context_prior: Tensor::zeros((b, self.config.contextual_enc_dec.latent_channels, lh, lw), DType::F32, x_hat.device())?,
            next_p_index: 1,
        })
    }

    pub fn intra_train(&self, x: &Tensor, rng: &mut ChaCha8Rng) -> Result<IntraPass> {
        let (_, _, h, w) = x.dims4()?;
        let y = self.intra_enc.forward(x)?;
        let r = self.intra_entropy.forward_train(&y, None, None, rng)?;
        let (x_hat, feature) = self.intra_dec.forward(&r.y_hat)?;
        let rate = ((r.bits_y.sum_all()? + r.bits_z.sum_all()?)? / (h * w) as f64)?;
        let distortion = mse(&x_hat, x)?;
        let state = self.reset_state(&x_hat, &feature)?;
        Ok(IntraPass { x_hat, distortion, rate, state })
    }

    /// One P-frame. With `recon == false` only the motion path runs (the
    /// motion-only stages) and the motion-compensated prediction becomes the
    /// next reference frame.
    pub fn inter_train(&self, x: &Tensor, state: &FrameState, rng: &mut ChaCha8Rng, recon: bool) -> Result<InterPass> {
        let (_, _, h, w) = x.dims4()?;
        let pixels = (h * w) as f64;
        let (vs, vd) = self.flow.estimate(x, &state.frame)?;
        let m = self.motion_enc.forward(&Tensor::cat(&[&vs, &vd], 1)?)?;
        let rm = self.motion_entropy.forward_train(&m, Some(&state.motion_prior), None, rng)?;
        let (vs_hat, vd_hat) = self.motion_dec.forward(&rm.y_hat)?;
        let warped = motion_compensate(&state.frame, &vs_hat, &vd_hat)?;
        let d_m = mse(&warped, x)?;
        let r_m = ((rm.bits_y.sum_all()? + rm.bits_z.sum_all()?)? / pixels)?;
        if !recon {
            let mut next = state.clone();
            next.frame = warped.clone();
            next.motion_prior = rm.y_hat;
            next.next_p_index += 1;
            return Ok(InterPass { warped, d_m, r_m, recon: None, state: next });
        }
        let (ctx, long_term) = self.tcm.forward(&state.feature, &state.long_term, &vs_hat, &vd_hat)?;
        let y = self.ctx_enc.forward(x, &ctx)?;
        let ry = self.ctx_entropy.forward_train(&y, Some(&state.context_prior), Some(&ctx[2]), rng)?;
        let (x_hat, feature) = self.ctx_dec.forward(&ry.y_hat, &ctx)?;
        let d_y = mse(&x_hat, x)?;
        let r_y = ((ry.bits_y.sum_all()? + ry.bits_z.sum_all()?)? / pixels)?;
        let next = FrameState {
            frame: x_hat.clone(),
            feature,
            long_term,
            motion_prior: rm.y_hat,
            context_prior: ry.y_hat,
            next_p_index: state.next_p_index + 1,
        };
        Ok(InterPass { warped, d_m, r_m, recon: Some(ReconPass { x_hat, d_y, r_y }), state: next })
    }
}

pub fn frame_to_tensor(frame: &Frame, dev: &Device) -> Result<Tensor> {
    let (w, h) = frame.dims();
    Ok(Tensor::from_slice(frame.data(), (1, 3, h, w), dev)?)
}

pub fn frames_to_batch(frames: &[&Frame], dev: &Device) -> Result<Tensor> {
    let ts: Vec<Tensor> = frames.iter().map(|f| frame_to_tensor(f, dev)).collect::<Result<_>>()?;
    Ok(Tensor::cat(&ts, 0)?)
}

/// First image of the batch, clamped to `[0, 1]`.
pub fn tensor_to_frame(t: &Tensor) -> Result<Frame> {
    let (_, _, h, w) = t.dims4()?;
    let data = t.get(0)?.clamp(0f32, 1f32)?.flatten_all()?.to_vec1::<f32>()?;
    Frame::from_planar(w, h, data, ColorSpace::Rgb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn res(c: usize) -> usize {
        2 * conv_params(3, c, c)
    }

    fn factorized(c: usize) -> usize {
        58 * c
    }

    #[test]
    fn parameter_counts_match_closed_form() {
        let cfg = ModelConfig::toy();
        let m = build_model(&cfg, 0).unwrap();
        let r = count_parameters(&m);
        let ce = cfg.motion_estimation.channels;
        let me = 3 * (conv_params(3, 8, ce) + conv_params(3, ce, ce) + conv_params(3, ce, 2));
        assert_eq!(r.per_module["motion_estimation"], me);

        let (c, rb, l) = (cfg.motion_enc_dec.channels, cfg.motion_enc_dec.res_blocks, cfg.motion_entropy.latent_channels);
        let enc = conv_params(3, 4, c) + 2 * conv_params(3, c, c) + conv_params(3, c, l) + 3 * rb * res(c);
        let dec = conv_params(3, l, 4 * c) + 3 * conv_params(3, c, 4 * c) + 3 * rb * res(c) + conv_params(3, c, 4);
        assert_eq!(r.per_module["motion_enc_dec"], enc + dec);

        let ic = &cfg.intra;
        let (c, l, hc, cf) = (ic.channels, ic.latent_channels, ic.hyper_channels, cfg.tcm.feature_channels);
        let enc = conv_params(3, 3, c) + 2 * conv_params(3, c, c) + conv_params(3, c, l) + 3 * res(c);
        let dec = conv_params(3, l, 4 * c) + 2 * conv_params(3, c, 4 * c) + conv_params(3, c, 4 * cf) + 3 * res(c) + res(cf)
            + conv_params(3, cf, 3);
        let hyper = conv_params(3, l, c) + conv_params(3, c, c) + conv_params(3, c, hc) + conv_params(3, hc, 4 * c)
            + conv_params(3, c, 4 * c) + conv_params(3, c, c);
        let fusion = conv_params(3, c, c) + res(c) + conv_params(3, c, 2 * l);
        assert_eq!(r.per_module["intra"], enc + dec + hyper + factorized(hc) + fusion);

        assert_eq!(r.total, r.per_module.values().sum::<usize>());
        assert_eq!(r.total, m.store().total());
    }

    #[test]
    fn scaling_a_part_leaves_the_others_alone() {
        let base = ModelConfig::toy();
        let mut big = base.clone();
        big.contextual_enc_dec.channels *= 2;
        let a = count_parameters(&build_model(&base, 0).unwrap());
        let b = count_parameters(&build_model(&big, 0).unwrap());
        for m in MODULE_NAMES {
            if m == "contextual_enc_dec" {
                assert!(b.per_module[m] > a.per_module[m]);
            } else {
                assert_eq!(a.per_module[m], b.per_module[m], "{m}");
            }
        }
    }

    fn toy_frames(n: usize, size: usize) -> Vec<Tensor> {
        let dev = Device::Cpu;
        (0..n)
            .map(|t| {
                let f = Frame::from_fn(size, size, |c, y, x| {
                    (0.5 + 0.3 * (((x + 2 * t) as f32 * 0.3).sin() * ((y + t) as f32 * 0.2).cos()) + 0.05 * c as f32).clamp(0.0, 1.0)
                });
                frame_to_tensor(&f, &dev).unwrap()
            })
            .collect()
    }

    #[test]
    fn forward_shapes_for_every_arch() {
        for arch in [ArchKind::Cnn, ArchKind::MixedCnnTransformer, ArchKind::Transformer] {
            let cfg = ModelConfig::toy().with_arch(arch);
            let m = build_model(&cfg, 3).unwrap();
            let xs = toy_frames(2, 64);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let i = m.intra_train(&xs[0], &mut rng).unwrap();
            assert_eq!(i.x_hat.dims(), [1, 3, 64, 64]);
            assert_eq!(i.state.feature.dims(), [1, cfg.tcm.feature_channels, 64, 64]);
            let p = m.inter_train(&xs[1], &i.state, &mut rng, true).unwrap();
            let rec = p.recon.as_ref().unwrap();
            assert_eq!(rec.x_hat.dims(), [1, 3, 64, 64]);
            assert_eq!(p.state.context_prior.dims(), [1, cfg.contextual_enc_dec.latent_channels, 4, 4]);
            assert_eq!(p.state.motion_prior.dims(), [1, cfg.motion_entropy.latent_channels, 4, 4]);
            assert_eq!(p.state.next_p_index, 2);
            for v in [&p.d_m, &p.r_m, &rec.d_y, &rec.r_y] {
                assert!(v.to_scalar::<f32>().unwrap().is_finite());
            }
        }
    }

    #[test]
    fn motion_only_pass_references_the_prediction() {
        let m = build_model(&ModelConfig::toy(), 1).unwrap();
        let xs = toy_frames(2, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let i = m.intra_train(&xs[0], &mut rng).unwrap();
        let p = m.inter_train(&xs[1], &i.state, &mut rng, false).unwrap();
        assert!(p.recon.is_none());
        let d = (&p.state.frame - &p.warped).unwrap().abs().unwrap().max_all().unwrap();
        assert_eq!(d.to_scalar::<f32>().unwrap(), 0.0);
        assert_eq!(p.state.feature.dims(), i.state.feature.dims());
    }

    #[test]
    fn invalid_config_is_rejected_before_building() {
        let mut cfg = ModelConfig::toy();
        cfg.tcm.channels = 0;
        assert!(matches!(build_model(&cfg, 0), Err(NvcError::InvalidConfig { .. })));
    }

    #[test]
    #[ignore = "timing probe"]
    fn step_timing() {
        for arch in [ArchKind::Cnn, ArchKind::MixedCnnTransformer, ArchKind::Transformer] {
            let m = build_model(&ModelConfig::toy().with_arch(arch), 0).unwrap();
            let xs = toy_frames(2, 64);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let t0 = std::time::Instant::now();
            for _ in 0..5 {
                let i = m.intra_train(&xs[0], &mut rng).unwrap();
                let p = m.inter_train(&xs[1], &i.state.detach(), &mut rng, true).unwrap();
                let r = p.recon.unwrap();
                let loss = ((r.d_y * 256.0).unwrap() + r.r_y + p.r_m).unwrap();
                loss.backward().unwrap();
            }
            eprintln!("{arch}: {:?} per step", t0.elapsed() / 5);
        }
    }
}
