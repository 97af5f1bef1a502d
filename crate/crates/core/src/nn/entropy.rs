//! Probability models for latents: tensor Laplace rates, the factorized
//! prior for hyper latents and the fused hyper/latent/spatial/temporal
//! parameter predictor with its four-step quadtree schedule.

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Blocks, Conv, Down, Up};
use super::ops::{leaky_relu, sigmoid, softplus};
use super::params::{Init, ParamPath};
use crate::config::{ArchKind, AttentionConfig};
use crate::entropy::{QuadtreeSchedule, P_FLOOR, QUADTREE_STEPS, SIGMA_MIN};
use crate::error::{NvcError, Result};

/// Per-element bits of `d = value - mu` under Laplace(0, sigma), matching
/// [`crate::entropy::laplace_bits`] and differentiable in `d` and `sigma`.
pub fn laplace_bits(d: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    let b = sigma.maximum(SIGMA_MIN)?;
    let a = d.abs()?;
    let half = 0.5;
    // center: 1 - e^{-(a+.5)/b}/2 - e^{(a-.5)/b}/2, evaluated on a <= .5
    let ac = a.minimum(half)?;
    let p_center = ((((ac.clone() + half)?.neg()? / &b)?.exp()? + ((ac - half)? / &b)?.exp()?)? * -0.5)? + 1.0;
    let bits_center = p_center?.maximum(P_FLOOR)?.log()?.affine(-std::f64::consts::LOG2_E, 0.0)?;
    // tail: e^{-(a-.5)/b} (1 - e^{-1/b}) / 2 in log form, evaluated on a >= .5
    let at = a.maximum(half)?;
    let log_p = (((at - half)?.neg()? / &b)? + ((b.recip()?.neg()?.exp()?.neg()? + 1.0)?.log()? + (0.5f64).ln())?)?;
    let bits_tail = log_p.affine(-std::f64::consts::LOG2_E, 0.0)?.minimum(-P_FLOOR.log2())?;
    let is_center = a.lt(half)?;
    Ok(is_center.where_cond(&bits_center, &bits_tail)?)
}

/// Learned per-channel monotone CDF built from `filters` hidden widths.
pub struct FactorizedPrior {
    mats: Vec<Tensor>,
    biases: Vec<Tensor>,
    factors: Vec<Tensor>,
    channels: usize,
}

const FILTERS: [usize; 4] = [3, 3, 3, 3];
const INIT_SCALE: f64 = 10.0;
/// Hyper symbols are coded over `-HYPER_RADIUS..=HYPER_RADIUS`.
pub const HYPER_RADIUS: i32 = 32;

impl FactorizedPrior {
    pub fn new(p: &mut ParamPath, channels: usize) -> Result<Self> {
        let dims: Vec<usize> = std::iter::once(1).chain(FILTERS).chain(std::iter::once(1)).collect();
        let k = dims.len() - 1;
        let scale = INIT_SCALE.powf(1.0 / k as f64);
        let (mut mats, mut biases, mut factors) = (vec![], vec![], vec![]);
        for i in 0..k {
            let init = (1.0 / scale / dims[i + 1] as f64).exp_m1().ln() as f32;
            mats.push(p.var(&format!("matrix{i}"), &[channels, dims[i + 1], dims[i]], Init::Const(init))?);
            biases.push(p.var(&format!("bias{i}"), &[channels, dims[i + 1], 1], Init::Uniform(-0.5, 0.5))?);
            if i + 1 < k {
                factors.push(p.var(&format!("factor{i}"), &[channels, dims[i + 1], 1], Init::Zeros)?);
            }
        }
        Ok(FactorizedPrior { mats, biases, factors, channels })
    }

    /// Logits of the CDF for `x` of shape `(channels, 1, n)`.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for i in 0..self.mats.len() {
            x = softplus(&self.mats[i])?.matmul(&x)?.broadcast_add(&self.biases[i])?;
            if let Some(f) = self.factors.get(i) {
                x = (&x + f.tanh()?.broadcast_mul(&x.tanh()?)?)?;
            }
        }
        Ok(x)
    }

    fn flat(&self, z: &Tensor) -> Result<(Tensor, (usize, usize, usize, usize))> {
        let dims = z.dims4()?;
        let (b, c, h, w) = dims;
        if c != self.channels {
            return Err(NvcError::ShapeMismatch(format!("hyper has {c} channels, prior {}", self.channels)));
        }
        Ok((z.permute((1, 0, 2, 3))?.reshape((c, 1, b * h * w))?, dims))
    }

    /// Interval mass of `[x - 0.5, x + 0.5)` per element.
    pub fn likelihood(&self, z: &Tensor) -> Result<Tensor> {
        let (x, (b, c, h, w)) = self.flat(z)?;
        let lower = self.logits(&(&x - 0.5)?)?;
        let upper = self.logits(&(&x + 0.5)?)?;
        // evaluate on the side where the sigmoids do not saturate
        let sign = (&lower + &upper)?.sign()?.neg()?.detach();
        let p = (sigmoid(&(&sign * &upper)?)? - sigmoid(&(&sign * &lower)?)?)?.abs()?;
        Ok(p.reshape((c, b, h, w))?.permute((1, 0, 2, 3))?)
    }

    pub fn bits(&self, z: &Tensor) -> Result<Tensor> {
        Ok(self.likelihood(z)?.maximum(P_FLOOR)?.log()?.affine(-std::f64::consts::LOG2_E, 0.0)?)
    }

    pub fn cdf(&self, x: &Tensor) -> Result<Tensor> {
        sigmoid(&self.logits(x)?)
    }

    /// Probabilities of `-HYPER_RADIUS..=HYPER_RADIUS` for every channel,
    /// tails folded into the boundary symbols.
    pub fn pmf_tables(&self) -> Result<Vec<Vec<f64>>> {
        let n = (2 * HYPER_RADIUS + 2) as usize;
        let edges: Vec<f32> = (0..n).map(|i| i as f32 - HYPER_RADIUS as f32 - 0.5).collect();
        let grid = Tensor::from_vec(edges, (1, 1, n), self.mats[0].device())?
            .broadcast_as((self.channels, 1, n))?
            .contiguous()?;
        let cdf = self.cdf(&grid)?.reshape((self.channels, n))?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        Ok(cdf
            .into_iter()
            .map(|c| {
                let mut pmf: Vec<f64> = c.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
                let last = pmf.len() - 1;
                pmf[0] += c[0];
                pmf[last] += 1.0 - c[n - 1];
                pmf
            })
            .collect())
    }
}

/// Which priors feed a latent's parameter predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntropyLayout {
    pub quadtree: bool,
    pub latent_prior: bool,
    /// Channels of the quarter-resolution temporal context, when used.
    pub temporal: Option<usize>,
}

struct Fusion {
    inp: Conv,
    blocks: Blocks,
    out: Conv,
}

impl Fusion {
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let h = self.blocks.forward(&leaky_relu(&self.inp.forward(x)?)?)?;
        let o = self.out.forward(&h)?;
        let c = o.dim(1)? / 2;
        let mu = o.narrow(1, 0, c)?;
        let sigma = softplus(&o.narrow(1, c, c)?)?.maximum(SIGMA_MIN)?;
        Ok((mu, sigma))
    }
}

/// Hyperprior plus fused parameter prediction for one latent stream.
pub struct LatentEntropy {
    layout: EntropyLayout,
    latent_channels: usize,
    h_enc: (Conv, Down, Down),
    h_dec: (Up, Up, Conv),
    prior: FactorizedPrior,
    temporal: Option<(Down, Down)>,
    spatial: Vec<(Conv, Conv)>,
    fusion: Vec<Fusion>,
}

/// Non-spatial conditioning shared by all quadtree steps.
pub struct Priors(Vec<Tensor>);

/// Training-time pass: noisy latents and differentiable per-element bits.
pub struct TrainRate {
    pub y_hat: Tensor,
    pub bits_y: Tensor,
    pub bits_z: Tensor,
}

impl LatentEntropy {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: &mut ParamPath,
        latent_channels: usize,
        channels: usize,
        hyper_channels: usize,
        layout: EntropyLayout,
        arch: ArchKind,
        attn: &AttentionConfig,
    ) -> Result<Self> {
        let (c, ch, hc) = (latent_channels, channels, hyper_channels);
        let cnn = ArchKind::Cnn;
        let h_enc = (
            Conv::new(&mut p.pp("h_enc.0"), c, ch, 3, 1)?,
            Down::new(&mut p.pp("h_enc.1"), ch, ch, cnn)?,
            Down::new(&mut p.pp("h_enc.2"), ch, hc, cnn)?,
        );
        let h_dec = (
            Up::new(&mut p.pp("h_dec.0"), hc, ch, cnn)?,
            Up::new(&mut p.pp("h_dec.1"), ch, ch, cnn)?,
            Conv::new(&mut p.pp("h_dec.2"), ch, ch, 3, 1)?,
        );
        let prior = FactorizedPrior::new(&mut p.pp("factorized"), hc)?;
        let temporal = match layout.temporal {
            Some(tc) => {
                Some((Down::new(&mut p.pp("temporal.0"), tc, ch, cnn)?, Down::new(&mut p.pp("temporal.1"), ch, ch, cnn)?))
            }
            None => None,
        };
        let steps = if layout.quadtree { QUADTREE_STEPS } else { 1 };
        let mut spatial = Vec::new();
        for k in 1..steps {
            spatial.push((
                Conv::new(&mut p.pp(format!("spatial{k}.0")), c, ch, 3, 1)?,
                Conv::new(&mut p.pp(format!("spatial{k}.1")), ch, ch, 3, 1)?,
            ));
        }
        let base_in = ch + if layout.latent_prior { c } else { 0 } + if layout.temporal.is_some() { ch } else { 0 };
        let mut fusion = Vec::new();
        for k in 0..steps {
            let mut fp = p.pp(format!("fusion{k}"));
            let cin = base_in + if k > 0 { ch } else { 0 };
            fusion.push(Fusion {
                inp: Conv::new(&mut fp.pp("in"), cin, ch, 3, 1)?,
                blocks: Blocks::new(&mut fp.pp("blocks"), ch, 1, arch, attn)?,
                out: Conv::new(&mut fp.pp("out"), ch, 2 * c, 3, 1)?,
            });
        }
        Ok(LatentEntropy { layout, latent_channels: c, h_enc, h_dec, prior, temporal, spatial, fusion })
    }

    pub fn layout(&self) -> EntropyLayout {
        self.layout
    }

    pub fn prior(&self) -> &FactorizedPrior {
        &self.prior
    }

    pub fn hyper_encode(&self, y: &Tensor) -> Result<Tensor> {
        let h = leaky_relu(&self.h_enc.0.forward(y)?)?;
        let h = leaky_relu(&self.h_enc.1.forward(&h)?)?;
        self.h_enc.2.forward(&h)
    }

    pub fn hyper_decode(&self, z_hat: &Tensor) -> Result<Tensor> {
        let h = leaky_relu(&self.h_dec.0.forward(z_hat)?)?;
        let h = leaky_relu(&self.h_dec.1.forward(&h)?)?;
        self.h_dec.2.forward(&h)
    }

    /// Assembles the step-independent priors. `latent_prior` is required
    /// exactly when the layout uses it, likewise `context` (the smallest
    /// temporal context) for the temporal prior.
    pub fn priors(&self, hyper: &Tensor, latent_prior: Option<&Tensor>, context: Option<&Tensor>) -> Result<Priors> {
        let (b, _, h, w) = hyper.dims4()?;
        let mut v = vec![hyper.clone()];
        match (self.layout.latent_prior, latent_prior) {
            (true, Some(lp)) => {
                if lp.dims() != [b, self.latent_channels, h, w] {
                    return Err(NvcError::AlignmentMismatch(format!("latent prior {:?} vs hyper {:?}", lp.dims(), hyper.dims())));
                }
                v.push(lp.clone());
            }
            (false, None) => {}
            _ => return Err(NvcError::AlignmentMismatch("latent prior presence does not match the layout".into())),
        }
        match (&self.temporal, context) {
            (Some((d0, d1)), Some(ctx)) => {
                let t = d1.forward(&leaky_relu(&d0.forward(ctx)?)?)?;
                if t.dims()[2..] != [h, w] {
                    return Err(NvcError::AlignmentMismatch(format!("temporal prior {:?} vs hyper {:?}", t.dims(), hyper.dims())));
                }
                v.push(t);
            }
            (None, None) => {}
            _ => return Err(NvcError::AlignmentMismatch("temporal context presence does not match the layout".into())),
        }
        Ok(Priors(v))
    }

    /// Mean and scale for quadtree step `step`, given the latent with every
    /// position outside the steps before `step` zeroed.
    pub fn step_params(&self, step: usize, priors: &Priors, known: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut inputs = priors.0.clone();
        if step > 0 {
            let (s0, s1) = &self.spatial[step - 1];
            inputs.push(s1.forward(&leaky_relu(&s0.forward(known)?)?)?);
        }
        self.fusion[step].forward(&Tensor::cat(&inputs, 1)?)
    }

    pub fn steps(&self) -> usize {
        self.fusion.len()
    }

    /// Training pass with additive uniform noise standing in for rounding.
    pub fn forward_train(&self, y: &Tensor, latent_prior: Option<&Tensor>, context: Option<&Tensor>, rng: &mut ChaCha8Rng) -> Result<TrainRate> {
        let z = self.hyper_encode(y)?;
        let z_hat = (&z + uniform_noise(z.dims(), rng, z.device())?)?;
        let bits_z = self.prior.bits(&z_hat)?;
        let priors = self.priors(&self.hyper_decode(&z_hat)?, latent_prior, context)?;
        let y_hat = (y + uniform_noise(y.dims(), rng, y.device())?)?;
        let (mu, sigma) = self.all_step_params(&priors, &y_hat)?;
        let bits_y = laplace_bits(&(&y_hat - &mu)?, &sigma)?;
        Ok(TrainRate { y_hat, bits_y, bits_z })
    }

    /// Parameters for every position, each taken from its own step with the
    /// context restricted to earlier steps. All steps run at once.
    pub fn all_step_params(&self, priors: &Priors, y_hat: &Tensor) -> Result<(Tensor, Tensor)> {
        if !self.layout.quadtree {
            return self.step_params(0, priors, y_hat);
        }
        let (_, _, h, w) = y_hat.dims4()?;
        let sched = QuadtreeSchedule::new(h, w)?;
        let (mut mu, mut sigma) = (None::<Tensor>, None::<Tensor>);
        for step in 0..sched.steps() {
            let known = y_hat.broadcast_mul(&mask_tensor(&sched.known_mask(step), h, w, y_hat)?)?;
            let (m, s) = self.step_params(step, priors, &known)?;
            let sel = mask_tensor(&sched.step_mask(step), h, w, y_hat)?;
            let m = m.broadcast_mul(&sel)?;
            let s = s.broadcast_mul(&sel)?;
            mu = Some(match mu {
                Some(a) => (a + m)?,
                None => m,
            });
            sigma = Some(match sigma {
                Some(a) => (a + s)?,
                None => s,
            });
        }
        Ok((mu.unwrap(), sigma.unwrap()))
    }
}

pub fn mask_tensor(mask: &[f32], h: usize, w: usize, like: &Tensor) -> Result<Tensor> {
    Ok(Tensor::from_vec(mask.to_vec(), (1, 1, h, w), like.device())?.to_dtype(like.dtype())?)
}

pub fn uniform_noise(shape: &[usize], rng: &mut ChaCha8Rng, dev: &Device) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let v: Vec<f32> = (0..n).map(|_| rng.random_range(-0.5f32..0.5)).collect();
    Ok(Tensor::from_vec(v, shape, dev)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use rand::SeedableRng;

    #[test]
    fn tensor_bits_match_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d: Vec<f64> = (0..400).map(|_| rng.random_range(-30.0..30.0)).collect();
        let s: Vec<f64> = (0..400).map(|_| rng.random_range(0.0..8.0)).collect();
        let dt = Tensor::from_vec(d.clone(), 400, &Device::Cpu).unwrap();
        let st = Tensor::from_vec(s.clone(), 400, &Device::Cpu).unwrap();
        let bits = laplace_bits(&dt, &st).unwrap().to_vec1::<f64>().unwrap();
        for i in 0..400 {
            let want = crate::entropy::laplace_bits(d[i], 0.0, s[i]);
            assert!((bits[i] - want).abs() < 1e-9 * want.max(1.0), "{} {} {} {want}", d[i], s[i], bits[i]);
        }
    }

    #[test]
    fn factorized_cdf_is_monotone_and_bits_nonnegative() {
        let mut store = ParamStore::new(2);
        let prior = FactorizedPrior::new(&mut store.root().pp("p"), 3).unwrap();
        for v in store.vars().values() {
            v.set(&(v.as_tensor() + Tensor::randn(0f32, 0.3, v.dims(), &Device::Cpu).unwrap()).unwrap()).unwrap();
        }
        let grid: Vec<f32> = (0..401).map(|i| -20.0 + i as f32 * 0.1).collect();
        let g = Tensor::from_vec(grid, (1, 1, 401), &Device::Cpu).unwrap().broadcast_as((3, 1, 401)).unwrap().contiguous().unwrap();
        let cdf = prior.cdf(&g).unwrap().reshape((3, 401)).unwrap().to_vec2::<f32>().unwrap();
        for c in cdf {
            assert!(c.windows(2).all(|w| w[0] <= w[1]));
        }
        let z = Tensor::randn(0f32, 4.0, (2, 3, 2, 2), &Device::Cpu).unwrap();
        let bits = prior.bits(&z).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(bits.iter().all(|b| *b >= 0.0 && *b <= 16.0));
        for pmf in prior.pmf_tables().unwrap() {
            assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn fresh_predictor_is_finite_and_clamped() {
        let mut store = ParamStore::new(3);
        let attn = AttentionConfig::default();
        let layout = EntropyLayout { quadtree: true, latent_prior: true, temporal: Some(12) };
        let e = LatentEntropy::new(&mut store.root().pp("e"), 6, 8, 4, layout, ArchKind::Cnn, &attn).unwrap();
        let y = Tensor::zeros((1, 6, 4, 4), DType::F32, &Device::Cpu).unwrap();
        let ctx = Tensor::zeros((1, 12, 16, 16), DType::F32, &Device::Cpu).unwrap();
        let z = e.hyper_encode(&y).unwrap();
        assert_eq!(z.dims(), &[1, 4, 1, 1]);
        let pri = e.priors(&e.hyper_decode(&z).unwrap(), Some(&y), Some(&ctx)).unwrap();
        let (mu, sigma) = e.all_step_params(&pri, &y).unwrap();
        assert_eq!(mu.dims(), &[1, 6, 4, 4]);
        let s = sigma.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(s.iter().all(|v| v.is_finite() && *v as f64 >= SIGMA_MIN - 1e-9));
        assert!(matches!(e.priors(&e.hyper_decode(&z).unwrap(), None, Some(&ctx)), Err(NvcError::AlignmentMismatch(_))));
    }
}
