//! Optimizer loop for the staged schedule, pretraining of the flow network
//! and the intra codec, and the cascaded multi-frame rollout.
//!
//! Cascaded stages can recompute activations instead of keeping the whole
//! rollout graph alive. The forward pass runs once with every inter-frame
//! state detached, keeping only the states and the noise generator at each
//! frame boundary. The backward pass then walks the frames in reverse,
//! re-running frame `t` from its stored input state and backpropagating
//! `L_t / T + <S_{t+1}, g_{t+1}>`, where `g_{t+1}` is the gradient already
//! collected for its output state.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{frame_to_tensor, mse, CodecModel, FrameState};
use super::motion::motion_compensate;
use crate::config::MODULE_NAMES;
use crate::data::color::{KB, KG, KR};
use crate::data::{ClipSampler, Frame};
use crate::error::{NvcError, Result};
use crate::train::{cascaded_loss, check_lambda, compute_loss, frame_weight, LossBreakdown, LossKind, StagePlan};

/// What the distortion term measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionTarget {
    /// Mean squared error over RGB.
    #[default]
    Rgb,
    /// Y, Cb and Cr squared errors weighted 6:1:1.
    Yuv,
}

pub fn distortion(a: &Tensor, b: &Tensor, target: DistortionTarget) -> Result<Tensor> {
    match target {
        DistortionTarget::Rgb => mse(a, b),
        DistortionTarget::Yuv => {
            let d = (a - b)?;
            let ch = |i: usize| d.narrow(1, i, 1);
            let (r, g, bl) = (ch(0)?, ch(1)?, ch(2)?);
            let luma = ((&r * KR)? + (&g * KG)? + (&bl * KB)?)?;
            let y = (&luma * (219.0 / 255.0))?;
            let cb = ((&bl - &luma)? * (224.0 / 255.0 / (2.0 * (1.0 - KB))))?;
            let cr = ((&r - &luma)? * (224.0 / 255.0 / (2.0 * (1.0 - KR))))?;
            let m = |t: &Tensor| -> Result<Tensor> { Ok(t.sqr()?.mean_all()?) };
            Ok((((m(&y)? * 6.0)? + m(&cb)? + m(&cr)?)? / 8.0)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub lambda: f64,
    pub seed: u64,
    /// Global gradient-norm bound.
    pub clip_norm: f64,
    /// Recompute activations in cascaded stages instead of storing them.
    pub recompute: bool,
    pub target: DistortionTarget,
    pub flow_pretrain_steps: usize,
    pub flow_lr: f64,
    pub intra_pretrain_steps: usize,
    pub intra_lr: f64,
    /// Frames per intra pretraining step.
    pub intra_batch: usize,
    /// Clips of the pool scored for L_all before and after the schedule.
    pub eval_clips: usize,
    pub eval_frames: usize,
    /// CSV step log.
    pub log_path: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            lambda: 380.0,
            seed: 0,
            clip_norm: 1.0,
            recompute: true,
            target: DistortionTarget::Rgb,
            flow_pretrain_steps: 60,
            flow_lr: 1e-3,
            intra_pretrain_steps: 600,
            intra_lr: 1e-3,
            intra_batch: 4,
            eval_clips: 8,
            eval_frames: 3,
            log_path: None,
        }
    }
}

/// One optimizer step. Distortions and rates are means over the P-frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: String,
    pub step: usize,
    pub frames: usize,
    pub loss: f64,
    pub d_m: f64,
    pub d_y: f64,
    pub r_m: f64,
    pub r_y: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub index: usize,
    pub steps: usize,
    pub first_loss: f64,
    pub last_loss: f64,
    /// Parts outside the trainable scope.
    pub frozen: Vec<String>,
    /// Parts whose checksum changed although they were frozen.
    pub frozen_violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    pub stages: Vec<StageOutcome>,
    /// Validation L_all right before the first stage and after the last.
    pub l_all_start: f64,
    pub l_all_end: f64,
}

/// A fixed set of training clips held as tensors.
pub struct ClipPool {
    clips: Vec<Vec<Tensor>>,
}

impl ClipPool {
    pub fn from_frames(clips: &[Vec<Frame>]) -> Result<Self> {
        if clips.is_empty() || clips.iter().any(|c| c.is_empty()) {
            return Err(NvcError::EmptyDataset("clip pool needs non-empty clips".into()));
        }
        let dev = candle_core::Device::Cpu;
        let clips = clips
            .iter()
            .map(|c| c.iter().map(|f| frame_to_tensor(f, &dev)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        Ok(ClipPool { clips })
    }

    /// Draws `n` clips from the sampler.
    pub fn sample(sampler: &mut ClipSampler, n: usize) -> Result<Self> {
        let clips: Vec<Vec<Frame>> = sampler.by_ref().take(n).map(|c| c.frames).collect();
        Self::from_frames(&clips)
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clip_len(&self) -> usize {
        self.clips.iter().map(|c| c.len()).min().unwrap_or(0)
    }

    /// First `frames` frames of clip `i`.
    pub fn clip(&self, i: usize, frames: usize) -> Result<&[Tensor]> {
        let c = &self.clips[i % self.clips.len()];
        if frames > c.len() {
            return Err(NvcError::EmptyDataset(format!("{frames}-frame rollout from a {}-frame clip", c.len())));
        }
        Ok(&c[..frames])
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

fn mean_breakdown(b: &[LossBreakdown]) -> LossBreakdown {
    let n = b.len().max(1) as f64;
    let s = |f: fn(&LossBreakdown) -> f64| b.iter().map(f).sum::<f64>() / n;
    LossBreakdown { d_m: s(|x| x.d_m), d_y: s(|x| x.d_y), r_m: s(|x| x.r_m), r_y: s(|x| x.r_y), total: s(|x| x.total) }
}

/// Per-frame losses of a non-cascaded stage: the intra frame is coded
/// first, every P-frame then starts from the previous decoded state with
/// gradients cut between frames. Returns the mean P-frame loss.
pub fn rollout_loss(
    model: &CodecModel,
    clip: &[Tensor],
    kind: LossKind,
    lambda: f64,
    target: DistortionTarget,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Vec<LossBreakdown>)> {
    check_lambda(lambda)?;
    if clip.len() < 2 {
        return Err(crate::error::invalid("frames", "a rollout needs an intra and at least one P-frame"));
    }
    if kind == LossKind::CascadedAll {
        return Err(NvcError::InvalidKind("cascaded_all runs through cascaded_rollout".into()));
    }
    let recon = !matches!(kind, LossKind::MeD | LossKind::MeRD);
    let mut state = model.intra_train(&clip[0], rng)?.state.detach();
    let mut losses = Vec::with_capacity(clip.len() - 1);
    let mut out = Vec::with_capacity(clip.len() - 1);
    for x in &clip[1..] {
        let w = frame_weight(state.next_p_index)?;
        let p = model.inter_train(x, &state, rng, recon)?;
        let d_m = distortion(&p.warped, x, target)?;
        let wl = w * lambda;
        let (loss, b) = match &p.recon {
            None => {
                let l = match kind {
                    LossKind::MeD => (&d_m * wl)?,
                    _ => ((&d_m * wl)? + &p.r_m)?,
                };
                (l, LossBreakdown { d_m: scalar(&d_m)?, r_m: scalar(&p.r_m)?, ..Default::default() })
            }
            Some(r) => {
                let d_y = distortion(&r.x_hat, x, target)?;
                let l = match kind {
                    LossKind::RecD => (&d_y * wl)?,
                    LossKind::RecRD => ((&d_y * wl)? + &r.r_y)?,
                    _ => (((&d_y * wl)? + &p.r_m)? + &r.r_y)?,
                };
                let b = LossBreakdown { d_m: scalar(&d_m)?, d_y: scalar(&d_y)?, r_m: scalar(&p.r_m)?, r_y: scalar(&r.r_y)?, total: 0.0 };
                (l, b)
            }
        };
        let b = LossBreakdown { total: compute_loss(kind, w, lambda, &b)?, ..b };
        losses.push(loss);
        out.push(b);
        state = p.state.detach();
    }
    let n = losses.len() as f64;
    Ok(((Tensor::stack(&losses, 0)?.sum_all()? / n)?, out))
}

fn cascaded_frame(
    model: &CodecModel,
    x: &Tensor,
    state: Option<&FrameState>,
    lambda: f64,
    target: DistortionTarget,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Option<LossBreakdown>, FrameState)> {
    match state {
        None => {
            let p = model.intra_train(x, rng)?;
            let d = distortion(&p.x_hat, x, target)?;
            Ok((((d * lambda)? + &p.rate)?, None, p.state))
        }
        Some(s) => {
            let w = frame_weight(s.next_p_index)?;
            let p = model.inter_train(x, s, rng, true)?;
            let r = p.recon.as_ref().expect("recon path requested");
            let d_y = distortion(&r.x_hat, x, target)?;
            let loss = (((&d_y * (w * lambda))? + &p.r_m)? + &r.r_y)?;
            let mut b = LossBreakdown {
                d_m: scalar(&distortion(&p.warped, x, target)?)?,
                d_y: scalar(&d_y)?,
                r_m: scalar(&p.r_m)?,
                r_y: scalar(&r.r_y)?,
                total: 0.0,
            };
            b.total = compute_loss(LossKind::All, w, lambda, &b)?;
            Ok((loss, Some(b), p.state))
        }
    }
}

/// Result of one cascaded rollout.
pub struct Rollout {
    /// Mean of the per-frame losses, the intra frame included.
    pub loss: f64,
    pub intra_loss: f64,
    /// One entry per P-frame.
    pub breakdowns: Vec<LossBreakdown>,
    /// Gradients of `loss` for `vars`.
    pub grads: GradStore,
}

fn accumulate(total: &mut GradStore, part: &GradStore, vars: &[Var]) -> Result<()> {
    for v in vars {
        if let Some(g) = part.get(v.as_tensor()) {
            let sum = match total.get(v.as_tensor()) {
                Some(a) => (a + g)?,
                None => g.clone(),
            };
            total.insert(v.as_tensor(), sum.detach());
        }
    }
    Ok(())
}

/// Codes the clip as one GOP, each frame starting from the previous frame's
/// decoded state, and backpropagates the frame-averaged loss through the
/// whole rollout.
pub fn cascaded_rollout(
    model: &CodecModel,
    clip: &[Tensor],
    lambda: f64,
    target: DistortionTarget,
    rng: &mut ChaCha8Rng,
    recompute: bool,
    vars: &[Var],
) -> Result<Rollout> {
    check_lambda(lambda)?;
    let t_len = clip.len();
    if t_len < 2 {
        return Err(crate::error::invalid("frames", "a cascaded rollout needs at least 2 frames"));
    }
    let mut values = Vec::with_capacity(t_len);
    let mut breakdowns = Vec::with_capacity(t_len - 1);
    let mut grads = GradStore::default();
    if !recompute {
        let mut state: Option<FrameState> = None;
        let mut losses = Vec::with_capacity(t_len);
        for x in clip {
            let (l, b, s) = cascaded_frame(model, x, state.as_ref(), lambda, target, rng)?;
            values.push(scalar(&l)?);
            breakdowns.extend(b);
            losses.push(l);
            state = Some(s);
        }
        let total = (Tensor::stack(&losses, 0)?.sum_all()? / t_len as f64)?;
        accumulate(&mut grads, &total.backward()?, vars)?;
    } else {
        let mut inputs: Vec<Option<FrameState>> = vec![None];
        let mut rngs = Vec::with_capacity(t_len);
        for x in clip {
            rngs.push(rng.clone());
            let (l, b, s) = cascaded_frame(model, x, inputs.last().unwrap().as_ref(), lambda, target, rng)?;
            values.push(scalar(&l)?);
            breakdowns.extend(b);
            inputs.push(Some(s.detach()));
        }
        let mut upstream: Option<Vec<Tensor>> = None;
        for t in (0..t_len).rev() {
            let leaves = match &inputs[t] {
                Some(s) => {
                    let v: Vec<Var> = s.tensors().into_iter().map(Var::from_tensor).collect::<candle_core::Result<_>>()?;
                    let st = FrameState::from_tensors(v.iter().map(|x| x.as_tensor().clone()).collect(), s.next_p_index)?;
                    Some((v, st))
                }
                None => None,
            };
            let mut r = rngs[t].clone();
            let (l, _, out) = cascaded_frame(model, &clip[t], leaves.as_ref().map(|x| &x.1), lambda, target, &mut r)?;
            let mut obj = (l / t_len as f64)?;
            if let Some(g) = &upstream {
                for (o, gi) in out.tensors().into_iter().zip(g) {
                    obj = (obj + (o * gi)?.sum_all()?)?;
                }
            }
            let gs = obj.backward()?;
            accumulate(&mut grads, &gs, vars)?;
            upstream = match leaves {
                Some((v, _)) => Some(
                    v.iter()
                        .map(|x| match gs.get(x.as_tensor()) {
                            Some(g) => Ok(g.detach()),
                            None => x.as_tensor().zeros_like(),
                        })
                        .collect::<candle_core::Result<_>>()?,
                ),
                None => None,
            };
        }
    }
    Ok(Rollout { loss: cascaded_loss(&values)?, intra_loss: values[0], breakdowns, grads })
}

/// Scales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_gradients(grads: &mut GradStore, vars: &[Var], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            sq += scalar(&g.sqr()?.sum_all()?)?;
        }
    }
    let norm = sq.sqrt();
    if norm.is_finite() && norm > max_norm && max_norm > 0.0 {
        let s = max_norm / norm;
        for v in vars {
            if let Some(g) = grads.get(v.as_tensor()) {
                let g = (g * s)?;
                grads.insert(v.as_tensor(), g);
            }
        }
    }
    Ok(norm)
}

fn adam(vars: Vec<Var>, lr: f64) -> Result<AdamW> {
    Ok(AdamW::new(vars, ParamsAdamW { lr, weight_decay: 0.0, ..Default::default() })?)
}

/// Mean P-frame `L_all` over the first `clips` clips with a fixed noise
/// seed; parameters are not touched.
pub fn validation_loss(model: &CodecModel, pool: &ClipPool, clips: usize, frames: usize, lambda: f64, target: DistortionTarget, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_e7a1);
    let n = clips.min(pool.len()).max(1);
    let mut sum = 0.0;
    for i in 0..n {
        let (l, _) = rollout_loss(model, pool.clip(i, frames)?, LossKind::All, lambda, target, &mut rng)?;
        sum += scalar(&l)?;
    }
    Ok(sum / n as f64)
}

/// Flow pretraining with the pure warp loss on random integer shifts of
/// pool frames and on consecutive pool frames, alternating.
pub fn pretrain_flow(model: &CodecModel, pool: &ClipPool, steps: usize, lr: f64, clip_norm: f64, seed: u64) -> Result<Vec<StepRecord>> {
    let vars = model.store().vars_in(&["motion_estimation"]);
    let mut opt = adam(vars.clone(), lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf10);
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        let clip = pool.clip(rng.random_range(0..pool.len()), 2)?;
        let (cur, reference) = if step % 2 == 0 {
            let (dx, dy) = (rng.random_range(-3i64..=3), rng.random_range(-3i64..=3));
            let shifted = clip[0].roll(dx as i32, 3)?.roll(dy as i32, 2)?;
            (shifted, clip[0].clone())
        } else {
            (clip[1].clone(), clip[0].clone())
        };
        let (fs, fd) = model.flow.estimate(&cur, &reference)?;
        let loss = mse(&motion_compensate(&reference, &fs, &fd)?, &cur)?;
        let l = scalar(&loss)?;
        if !l.is_finite() {
            return Err(NvcError::NanLoss { stage: 0, step });
        }
        let mut g = loss.backward()?;
        let grad_norm = clip_gradients(&mut g, &vars, clip_norm)?;
        opt.step(&g)?;
        out.push(StepRecord { stage: "flow".into(), step, frames: 2, loss: l, d_m: l, d_y: 0.0, r_m: 0.0, r_y: 0.0, grad_norm });
    }
    Ok(out)
}

/// Intra pretraining with `λ·D + R` on single pool frames.
pub fn pretrain_intra(model: &CodecModel, pool: &ClipPool, steps: usize, opts: &TrainOptions) -> Result<Vec<StepRecord>> {
    check_lambda(opts.lambda)?;
    let vars = model.store().vars_in(&["intra"]);
    let mut opt = adam(vars.clone(), opts.intra_lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x1a7a);
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        let len = pool.clip_len();
        let batch = opts.intra_batch.max(1);
        let xs = (0..batch)
            .map(|_| Ok(pool.clip(rng.random_range(0..pool.len()), len)?[rng.random_range(0..len)].clone()))
            .collect::<Result<Vec<_>>>()?;
        let x = &Tensor::cat(&xs, 0)?;
        let p = model.intra_train(x, &mut rng)?;
        let d = distortion(&p.x_hat, x, opts.target)?;
        let rate = (&p.rate / batch as f64)?;
        let loss = ((&d * opts.lambda)? + &rate)?;
        let l = scalar(&loss)?;
        if !l.is_finite() {
            return Err(NvcError::NanLoss { stage: 0, step });
        }
        let mut g = loss.backward()?;
        let grad_norm = clip_gradients(&mut g, &vars, opts.clip_norm)?;
        opt.step(&g)?;
        out.push(StepRecord { stage: "intra".into(), step, frames: 1, loss: l, d_m: 0.0, d_y: scalar(&d)?, r_m: 0.0, r_y: scalar(&rate)?, grad_norm });
    }
    Ok(out)
}

/// Runs one stage: `plan.steps` optimizer steps over clips drawn from the
/// pool, updating only the parts in the stage's scope.
pub fn run_stage(model: &CodecModel, plan: &StagePlan, pool: &ClipPool, opts: &TrainOptions, rng: &mut ChaCha8Rng) -> Result<(Vec<StepRecord>, StageOutcome)> {
    let st = &plan.stage;
    let modules = st.scope.modules(st.loss);
    let frozen: Vec<String> = MODULE_NAMES.iter().filter(|m| !modules.contains(m)).map(|m| m.to_string()).collect();
    let before: BTreeMap<String, u64> = frozen.iter().map(|m| Ok((m.clone(), model.store().checksum(m)?))).collect::<Result<_>>()?;
    let vars = model.store().vars_in(&modules);
    let mut opt = adam(vars.clone(), plan.lr)?;
    let mut records = Vec::with_capacity(plan.steps);
    for step in 0..plan.steps {
        let clip = pool.clip(rng.random_range(0..pool.len()), st.frames)?;
        let (loss, b, mut grads) = if st.loss == LossKind::CascadedAll {
            let r = cascaded_rollout(model, clip, opts.lambda, opts.target, rng, opts.recompute, &vars)?;
            (r.loss, mean_breakdown(&r.breakdowns), r.grads)
        } else {
            let (l, b) = rollout_loss(model, clip, st.loss, opts.lambda, opts.target, rng)?;
            let v = scalar(&l)?;
            let g = if v.is_finite() { l.backward()? } else { GradStore::default() };
            (v, mean_breakdown(&b), g)
        };
        if !loss.is_finite() {
            log::error!("stage {} step {step}: loss is {loss}", plan.index + 1);
            return Err(NvcError::NanLoss { stage: plan.index + 1, step });
        }
        let grad_norm = clip_gradients(&mut grads, &vars, opts.clip_norm)?;
        opt.step(&grads)?;
        records.push(StepRecord {
            stage: (plan.index + 1).to_string(),
            step,
            frames: st.frames,
            loss,
            d_m: b.d_m,
            d_y: b.d_y,
            r_m: b.r_m,
            r_y: b.r_y,
            grad_norm,
        });
    }
    let mut frozen_violations = Vec::new();
    for (m, c) in &before {
        if model.store().checksum(m)? != *c {
            frozen_violations.push(m.clone());
        }
    }
    let outcome = StageOutcome {
        index: plan.index,
        steps: plan.steps,
        first_loss: records.first().map_or(f64::NAN, |r| r.loss),
        last_loss: records.last().map_or(f64::NAN, |r| r.loss),
        frozen,
        frozen_violations,
    };
    Ok((records, outcome))
}

/// Pretraining followed by the planned stages in order. Stages before
/// `start` are skipped (resuming from a checkpoint cursor); pretraining only
/// runs when starting from the first stage.
pub fn run_schedule(model: &CodecModel, plans: &[StagePlan], pool: &ClipPool, opts: &TrainOptions, start: usize, mut on_stage: impl FnMut(&StageOutcome) -> Result<()>) -> Result<TrainReport> {
    check_lambda(opts.lambda)?;
    let mut records = Vec::new();
    if start == 0 {
        records.extend(pretrain_flow(model, pool, opts.flow_pretrain_steps, opts.flow_lr, opts.clip_norm, opts.seed)?);
        records.extend(pretrain_intra(model, pool, opts.intra_pretrain_steps, opts)?);
    }
    let eval = |m: &CodecModel| validation_loss(m, pool, opts.eval_clips, opts.eval_frames.min(pool.clip_len()), opts.lambda, opts.target, opts.seed);
    let l_all_start = eval(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut stages = Vec::new();
    for plan in plans.iter().filter(|p| p.index >= start) {
        let t0 = std::time::Instant::now();
        let (r, o) = run_stage(model, plan, pool, opts, &mut rng)?;
        log::info!(
            "stage {:>2} {:?}/{:?} T={} steps={} loss {:.4} -> {:.4} ({:.1?})",
            plan.index + 1,
            plan.stage.scope,
            plan.stage.loss,
            plan.stage.frames,
            plan.steps,
            o.first_loss,
            o.last_loss,
            t0.elapsed()
        );
        records.extend(r);
        on_stage(&o)?;
        stages.push(o);
    }
    let l_all_end = eval(model)?;
    let report = TrainReport { records, stages, l_all_start, l_all_end };
    if let Some(p) = &opts.log_path {
        write_step_log(p, &report.records)?;
    }
    Ok(report)
}

pub fn write_step_log(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| NvcError::Manifest(format!("step log: {e}")))?;
    for r in records {
        w.serialize(r).map_err(|e| NvcError::Manifest(format!("step log: {e}")))?;
    }
    w.flush()?;
    Ok(())
}
