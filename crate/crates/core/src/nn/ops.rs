//! Tensor operators with hand-written CPU kernels: im2col convolution and
//! bilinear backward warping, both with exact gradients.

use candle_core::{bail, CpuStorage, CustomOp1, CustomOp2, CustomOp3, Layout, Shape, Tensor, D};

use crate::error::Result;
use crate::motion::{gaussian_kernel, GAUSS_RADIUS};

type CResult<T> = candle_core::Result<T>;

fn slice_of<'a, T: candle_core::WithDType>(s: &'a [T], l: &Layout) -> CResult<&'a [T]> {
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&s[a..b]),
        None => bail!("custom op expects a contiguous input"),
    }
}

macro_rules! dispatch1 {
    ($s:expr, $l:expr, $f:expr) => {
        match $s {
            CpuStorage::F32(v) => {
                let (out, shape) = $f(slice_of(v, $l)?)?;
                Ok((CpuStorage::F32(out), shape))
            }
            CpuStorage::F64(v) => {
                let (out, shape) = $f(slice_of(v, $l)?)?;
                Ok((CpuStorage::F64(out), shape))
            }
            _ => bail!("unsupported dtype"),
        }
    };
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    k: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn out(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.k) / self.stride + 1, (w + 2 * self.pad - self.k) / self.stride + 1)
    }
}

/// `(b, c, h, w)` to `(b, c*k*k, oh*ow)`.
struct Im2Col(ConvGeom);

/// Adjoint of [`Im2Col`]: sums columns back into an image of size `(h, w)`.
struct Col2Im {
    g: ConvGeom,
    c: usize,
    h: usize,
    w: usize,
}

fn im2col<T: candle_core::WithDType>(x: &[T], b: usize, c: usize, h: usize, w: usize, g: ConvGeom) -> (Vec<T>, usize, usize) {
    let (oh, ow) = g.out(h, w);
    let kk = g.k * g.k;
    let n = oh * ow;
    let mut out = vec![T::zero(); b * c * kk * n];
    for bi in 0..b {
        for ci in 0..c {
            let src = &x[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let row = ((bi * c + ci) * kk + ky * g.k + kx) * n;
                    let dst = &mut out[row..row + n];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        let drow = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

fn col2im<T: candle_core::WithDType>(cols: &[T], b: usize, c: usize, h: usize, w: usize, g: ConvGeom) -> Vec<T> {
    let (oh, ow) = g.out(h, w);
    let kk = g.k * g.k;
    let n = oh * ow;
    let mut out = vec![T::zero(); b * c * h * w];
    for bi in 0..b {
        for ci in 0..c {
            let dst = &mut out[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let row = ((bi * c + ci) * kk + ky * g.k + kx) * n;
                    let src = &cols[row..row + n];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[iy as usize * w + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> CResult<(CpuStorage, Shape)> {
        let (b, c, h, w) = l.shape().dims4()?;
        let g = self.0;
        let f = |x| -> CResult<_> {
            let (out, oh, ow) = im2col(x, b, c, h, w, g);
            Ok((out, Shape::from((b, c * g.k * g.k, oh * ow))))
        };
        match s {
            CpuStorage::F32(v) => {
                let (o, sh) = f(slice_of(v, l)?)?;
                Ok((CpuStorage::F32(o), sh))
            }
            CpuStorage::F64(v) => {
                let (out, oh, ow) = im2col(slice_of(v, l)?, b, c, h, w, g);
                Ok((CpuStorage::F64(out), Shape::from((b, c * g.k * g.k, oh * ow))))
            }
            _ => bail!("im2col: unsupported dtype"),
        }
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> CResult<Option<Tensor>> {
        let (_, c, h, w) = arg.dims4()?;
        let g = grad.contiguous()?.apply_op1_no_bwd(&Col2Im { g: self.0, c, h, w })?;
        Ok(Some(g))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> CResult<(CpuStorage, Shape)> {
        let (b, _, _) = l.shape().dims3()?;
        let (c, h, w, g) = (self.c, self.h, self.w, self.g);
        let shape = Shape::from((b, c, h, w));
        dispatch1!(s, l, |x| -> CResult<_> { Ok((col2im(x, b, c, h, w, g), shape.clone())) })
    }
}

/// 2-D convolution, NCHW input and `(out, in, k, k)` weight.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let (b, ci, h, w) = x.dims4()?;
    let (co, ci_w, k, _) = weight.dims4()?;
    if ci != ci_w {
        return Err(crate::error::NvcError::ShapeMismatch(format!("conv expects {ci_w} input channels, got {ci}")));
    }
    let g = ConvGeom { k, stride, pad };
    let (oh, ow) = g.out(h, w);
    let y = if k == 1 && stride == 1 && pad == 0 {
        weight.reshape((co, ci))?.broadcast_matmul(&x.reshape((b, ci, h * w))?)?
    } else {
        let cols = x.contiguous()?.apply_op1(Im2Col(g))?;
        weight.reshape((co, ci * k * k))?.broadcast_matmul(&cols)?
    };
    let y = y.reshape((b, co, oh, ow))?;
    Ok(match bias {
        Some(bias) => y.broadcast_add(&bias.reshape((1, co, 1, 1))?)?,
        None => y,
    })
}

struct Sample {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    ax: f64,
    ay: f64,
    /// Whether the unclamped sample position lies strictly inside the map
    /// along x and y; flow gradients vanish where the clamp is active.
    inside_x: bool,
    inside_y: bool,
}

fn sample_at(x: usize, y: usize, u: f64, v: f64, h: usize, w: usize) -> Sample {
    let (fx, fy) = (x as f64 + u, y as f64 + v);
    let sx = fx.clamp(0.0, (w - 1) as f64);
    let sy = fy.clamp(0.0, (h - 1) as f64);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    Sample {
        x0,
        y0,
        x1: (x0 + 1).min(w - 1),
        y1: (y0 + 1).min(h - 1),
        ax: sx - x0 as f64,
        ay: sy - y0 as f64,
        inside_x: fx > 0.0 && fx < (w - 1) as f64,
        inside_y: fy > 0.0 && fy < (h - 1) as f64,
    }
}

trait Real: candle_core::WithDType + num_traits_lite::Lite {}
impl Real for f32 {}
impl Real for f64 {}

mod num_traits_lite {
    pub trait Lite: Copy {
        fn f(self) -> f64;
        fn from(v: f64) -> Self;
    }
    impl Lite for f32 {
        fn f(self) -> f64 {
            self as f64
        }
        fn from(v: f64) -> Self {
            v as f32
        }
    }
    impl Lite for f64 {
        fn f(self) -> f64 {
            self
        }
        fn from(v: f64) -> Self {
            v
        }
    }
}

fn warp_fwd<T: Real>(src: &[T], flow: &[T], b: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); b * c * hw];
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let u = flow[(bi * 2) * hw + p].f();
                let v = flow[(bi * 2 + 1) * hw + p].f();
                let s = sample_at(x, y, u, v, h, w);
                for ci in 0..c {
                    let base = (bi * c + ci) * hw;
                    let at = |yy: usize, xx: usize| src[base + yy * w + xx].f();
                    let top = (1.0 - s.ax) * at(s.y0, s.x0) + s.ax * at(s.y0, s.x1);
                    let bot = (1.0 - s.ax) * at(s.y1, s.x0) + s.ax * at(s.y1, s.x1);
                    out[base + p] = T::from((1.0 - s.ay) * top + s.ay * bot);
                }
            }
        }
    }
    out
}

fn warp_grad_src<T: Real>(flow: &[T], grad: &[T], b: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut acc = vec![0f64; b * c * hw];
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let s = sample_at(x, y, flow[(bi * 2) * hw + p].f(), flow[(bi * 2 + 1) * hw + p].f(), h, w);
                for ci in 0..c {
                    let base = (bi * c + ci) * hw;
                    let g = grad[base + p].f();
                    acc[base + s.y0 * w + s.x0] += g * (1.0 - s.ay) * (1.0 - s.ax);
                    acc[base + s.y0 * w + s.x1] += g * (1.0 - s.ay) * s.ax;
                    acc[base + s.y1 * w + s.x0] += g * s.ay * (1.0 - s.ax);
                    acc[base + s.y1 * w + s.x1] += g * s.ay * s.ax;
                }
            }
        }
    }
    acc.into_iter().map(T::from).collect()
}

fn warp_grad_flow<T: Real>(src: &[T], flow: &[T], grad: &[T], b: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); b * 2 * hw];
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let s = sample_at(x, y, flow[(bi * 2) * hw + p].f(), flow[(bi * 2 + 1) * hw + p].f(), h, w);
                let (mut gu, mut gv) = (0.0, 0.0);
                for ci in 0..c {
                    let base = (bi * c + ci) * hw;
                    let at = |yy: usize, xx: usize| src[base + yy * w + xx].f();
                    let g = grad[base + p].f();
                    let (s00, s01, s10, s11) = (at(s.y0, s.x0), at(s.y0, s.x1), at(s.y1, s.x0), at(s.y1, s.x1));
                    gu += g * ((1.0 - s.ay) * (s01 - s00) + s.ay * (s11 - s10));
                    gv += g * ((1.0 - s.ax) * (s10 - s00) + s.ax * (s11 - s01));
                }
                out[(bi * 2) * hw + p] = T::from(if s.inside_x { gu } else { 0.0 });
                out[(bi * 2 + 1) * hw + p] = T::from(if s.inside_y { gv } else { 0.0 });
            }
        }
    }
    out
}

struct Warp;
struct WarpGradSrc {
    c: usize,
}
struct WarpGradFlow;

impl CustomOp2 for Warp {
    fn name(&self) -> &'static str {
        "warp"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> CResult<(CpuStorage, Shape)> {
        let (b, c, h, w) = l1.shape().dims4()?;
        let shape = l1.shape().clone();
        match (s1, s2) {
            (CpuStorage::F32(a), CpuStorage::F32(f)) => {
                Ok((CpuStorage::F32(warp_fwd(slice_of(a, l1)?, slice_of(f, l2)?, b, c, h, w)), shape))
            }
            (CpuStorage::F64(a), CpuStorage::F64(f)) => {
                Ok((CpuStorage::F64(warp_fwd(slice_of(a, l1)?, slice_of(f, l2)?, b, c, h, w)), shape))
            }
            _ => bail!("warp: unsupported dtype"),
        }
    }

    fn bwd(&self, src: &Tensor, flow: &Tensor, _res: &Tensor, grad: &Tensor) -> CResult<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let c = src.dim(1)?;
        let gs = flow.apply_op2_no_bwd(&grad, &WarpGradSrc { c })?;
        let gf = src.apply_op3_no_bwd(flow, &grad, &WarpGradFlow)?;
        Ok((Some(gs), Some(gf)))
    }
}

impl CustomOp2 for WarpGradSrc {
    fn name(&self) -> &'static str {
        "warp-grad-src"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> CResult<(CpuStorage, Shape)> {
        let (b, _, h, w) = l1.shape().dims4()?;
        let shape = l2.shape().clone();
        let c = self.c;
        match (s1, s2) {
            (CpuStorage::F32(f), CpuStorage::F32(g)) => {
                Ok((CpuStorage::F32(warp_grad_src(slice_of(f, l1)?, slice_of(g, l2)?, b, c, h, w)), shape))
            }
            (CpuStorage::F64(f), CpuStorage::F64(g)) => {
                Ok((CpuStorage::F64(warp_grad_src(slice_of(f, l1)?, slice_of(g, l2)?, b, c, h, w)), shape))
            }
            _ => bail!("warp: unsupported dtype"),
        }
    }
}

impl CustomOp3 for WarpGradFlow {
    fn name(&self) -> &'static str {
        "warp-grad-flow"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> CResult<(CpuStorage, Shape)> {
        let (b, c, h, w) = l1.shape().dims4()?;
        let shape = l2.shape().clone();
        match (s1, s2, s3) {
            (CpuStorage::F32(a), CpuStorage::F32(f), CpuStorage::F32(g)) => Ok((
                CpuStorage::F32(warp_grad_flow(slice_of(a, l1)?, slice_of(f, l2)?, slice_of(g, l3)?, b, c, h, w)),
                shape,
            )),
            (CpuStorage::F64(a), CpuStorage::F64(f), CpuStorage::F64(g)) => Ok((
                CpuStorage::F64(warp_grad_flow(slice_of(a, l1)?, slice_of(f, l2)?, slice_of(g, l3)?, b, c, h, w)),
                shape,
            )),
            _ => bail!("warp: unsupported dtype"),
        }
    }
}

/// Differentiable backward bilinear warp with border clamping; the same
/// sampling rule as [`crate::motion::warp`].
pub fn warp(src: &Tensor, flow: &Tensor) -> Result<Tensor> {
    let (b, _, h, w) = src.dims4()?;
    if flow.dims() != [b, 2, h, w] {
        return Err(crate::error::NvcError::ShapeMismatch(format!(
            "flow {:?} does not match source {:?}",
            flow.dims(),
            src.dims()
        )));
    }
    Ok(src.contiguous()?.apply_op2(&flow.contiguous()?, Warp)?)
}

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&(x * 0.1)?)?)
}

pub fn softplus(x: &Tensor) -> Result<Tensor> {
    // relu(x) + log(1 + e^-|x|)
    Ok((x.relu()? + (x.abs()?.neg()?.exp()? + 1.0)?.log()?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// `(b, 4c, h, w)` to `(b, c, 2h, 2w)`.
pub fn pixel_shuffle(x: &Tensor) -> Result<Tensor> {
    let (b, c4, h, w) = x.dims4()?;
    let c = c4 / 4;
    Ok(x.reshape((b, c, 2, 2, h, w))?.permute((0, 1, 4, 2, 5, 3))?.reshape((b, c, 2 * h, 2 * w))?)
}

/// `(b, c, h, w)` to `(b, 4c, h/2, w/2)`, the inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h / 2, 2, w / 2, 2))?.permute((0, 1, 3, 5, 2, 4))?.reshape((b, 4 * c, h / 2, w / 2))?)
}

pub fn upsample_nearest2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h, 1, w, 1))?.broadcast_as((b, c, h, 2, w, 2))?.reshape((b, c, 2 * h, 2 * w))?)
}

pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h / 2, 2, w / 2, 2))?.mean(5)?.mean(3)?)
}

/// Separable-equivalent 5x5 Gaussian low-pass per channel with replicated
/// borders.
pub fn gaussian_blur(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let k1 = gaussian_kernel();
    let n = 2 * GAUSS_RADIUS + 1;
    let mut k2 = Vec::with_capacity(n * n);
    for a in k1.iter() {
        for bb in k1.iter() {
            k2.push(a * bb);
        }
    }
    let kernel = Tensor::from_vec(k2, (1, 1, n, n), x.device())?.to_dtype(x.dtype())?;
    let flat = x.reshape((b * c, 1, h, w))?;
    let padded = flat.pad_with_same(2, GAUSS_RADIUS, GAUSS_RADIUS)?.pad_with_same(3, GAUSS_RADIUS, GAUSS_RADIUS)?;
    Ok(conv2d(&padded, &kernel, None, 1, 0)?.reshape((b, c, h, w))?)
}

/// Low-pass structure and the residual detail.
pub fn decompose(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let s = gaussian_blur(x)?;
    let d = (x - &s)?;
    Ok((s, d))
}

/// Mean over all but the batch axis.
pub fn mean_per_sample(x: &Tensor) -> Result<Tensor> {
    let b = x.dim(0)?;
    Ok(x.reshape((b, ()))?.mean(D::Minus1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::FeatureMap;
    use candle_core::{DType, Device, Var};
    use rand::{Rng, SeedableRng};

    fn rand_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64, dtype: DType) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap().to_dtype(dtype).unwrap()
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn conv_matches_candle_forward_and_gradients() {
        for &(stride, pad, k) in &[(1usize, 1usize, 3usize), (2, 1, 3), (1, 0, 1), (1, 0, 5)] {
            let x = Var::from_tensor(&rand_tensor(&[2, 3, 10, 8], 1, -1.0, 1.0, DType::F32)).unwrap();
            let w = Var::from_tensor(&rand_tensor(&[5, 3, k, k], 2, -0.5, 0.5, DType::F32)).unwrap();
            let bias = Var::from_tensor(&rand_tensor(&[5], 3, -0.5, 0.5, DType::F32)).unwrap();
            let ours = conv2d(&x, &w, Some(&bias), stride, pad).unwrap();
            let theirs = x
                .conv2d(&w, pad, stride, 1, 1)
                .unwrap()
                .broadcast_add(&bias.reshape((1, 5, 1, 1)).unwrap())
                .unwrap();
            assert!(max_diff(&ours, &theirs) < 1e-5);
            let probe = rand_tensor(ours.dims(), 4, -1.0, 1.0, DType::F32);
            let g1 = (&ours * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            let g2 = (&theirs * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            for v in [&x, &w, &bias] {
                assert!(max_diff(g1.get(v).unwrap(), g2.get(v).unwrap()) < 1e-4, "stride {stride} k {k}");
            }
        }
    }

    #[test]
    fn warp_matches_reference_operator() {
        let src = rand_tensor(&[1, 3, 9, 11], 5, 0.0, 1.0, DType::F32);
        let flow = rand_tensor(&[1, 2, 9, 11], 6, -3.0, 3.0, DType::F32);
        let out = warp(&src, &flow).unwrap();
        let to_map = |t: &Tensor| {
            let (_, c, h, w) = t.dims4().unwrap();
            let v = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            FeatureMap::from_fn(c, h, w, |ci, y, x| v[(ci * h + y) * w + x])
        };
        let reference = crate::motion::warp(&to_map(&src), &to_map(&flow));
        assert!(to_map(&out).max_abs_diff(&reference) < 1e-6);
    }

    #[test]
    fn warp_gradients_match_finite_differences() {
        let src = rand_tensor(&[1, 2, 6, 7], 7, 0.0, 1.0, DType::F64);
        // keep samples away from integer grid lines and the clamp
        let flow = rand_tensor(&[1, 2, 6, 7], 8, -1.4, 1.4, DType::F64);
        let probe = rand_tensor(&[1, 2, 6, 7], 9, -1.0, 1.0, DType::F64);
        let sv = Var::from_tensor(&src).unwrap();
        let fv = Var::from_tensor(&flow).unwrap();
        let loss = |s: &Tensor, f: &Tensor| -> f64 {
            (warp(s, f).unwrap() * &probe).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap()
        };
        let grads = (warp(&sv, &fv).unwrap() * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        let gs = grads.get(&sv).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let gf = grads.get(&fv).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let h = 1e-6;
        let bump = |t: &Tensor, i: usize, d: f64| {
            let mut v = t.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            v[i] += d;
            Tensor::from_vec(v, t.dims(), &Device::Cpu).unwrap()
        };
        for i in (0..gs.len()).step_by(5) {
            let fd = (loss(&bump(&src, i, h), &flow) - loss(&bump(&src, i, -h), &flow)) / (2.0 * h);
            assert!((fd - gs[i]).abs() < 1e-6, "src {i}: {fd} vs {}", gs[i]);
        }
        let fv_vals = flow.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for i in 0..gf.len() {
            // finite differences straddle a kink when the sample sits on a grid line
            let pos = fv_vals[i] + ((i % 42) % 7) as f64;
            if (pos - pos.round()).abs() < 1e-3 {
                continue;
            }
            let fd = (loss(&src, &bump(&flow, i, h)) - loss(&src, &bump(&flow, i, -h))) / (2.0 * h);
            assert!((fd - gf[i]).abs() < 1e-5, "flow {i}: {fd} vs {}", gf[i]);
        }
    }

    #[test]
    fn shuffles_are_inverse() {
        let x = rand_tensor(&[1, 8, 4, 6], 10, -1.0, 1.0, DType::F32);
        let y = pixel_shuffle(&x).unwrap();
        assert_eq!(y.dims(), &[1, 2, 8, 12]);
        assert_eq!(max_diff(&pixel_unshuffle(&y).unwrap(), &x), 0.0);
        let up = upsample_nearest2(&x).unwrap();
        assert_eq!(max_diff(&avg_pool2(&up).unwrap(), &x), 0.0);
    }

    #[test]
    fn blur_matches_reference_decomposition() {
        let x = rand_tensor(&[1, 3, 12, 10], 11, 0.0, 1.0, DType::F32);
        let (s, d) = decompose(&x).unwrap();
        let v = x.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let map = FeatureMap::from_fn(3, 12, 10, |c, y, xx| v[(c * 12 + y) * 10 + xx]);
        let pair = crate::motion::decompose_structure_detail(&map);
        let sv = s.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let dv = d.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for c in 0..3 {
            for y in 0..12 {
                for xx in 0..10 {
                    let i = (c * 12 + y) * 10 + xx;
                    assert!((sv[i] - pair.structure.at(c, y, xx)).abs() < 1e-5);
                    assert!((dv[i] - pair.detail.at(c, y, xx)).abs() < 1e-5);
                }
            }
        }
    }
}
