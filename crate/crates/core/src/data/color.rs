//! BT.601 limited-range conversion between RGB and Y'CbCr.
//!
//! Y occupies [16, 235] and chroma [16, 240] in 8-bit units; floats are those
//! codes divided by 255. Chroma resampling uses center-sited samples: bilinear
//! upsampling and 2x2 box downsampling.

use super::frame::{ColorSpace, Frame, Yuv420Planes};

pub const KR: f64 = 0.299;
pub const KB: f64 = 0.114;
pub const KG: f64 = 1.0 - KR - KB;

const Y_OFFSET: f64 = 16.0;
const Y_RANGE: f64 = 219.0;
const C_OFFSET: f64 = 128.0;
const C_RANGE: f64 = 224.0;

/// RGB in [0, 1] to (Y, Cb, Cr) in 8-bit code units (not rounded).
pub fn rgb_to_ycbcr_codes(r: f64, g: f64, b: f64) -> [f64; 3] {
    let luma = KR * r + KG * g + KB * b;
    let cb = (b - luma) / (2.0 * (1.0 - KB));
    let cr = (r - luma) / (2.0 * (1.0 - KR));
    [Y_OFFSET + Y_RANGE * luma, C_OFFSET + C_RANGE * cb, C_OFFSET + C_RANGE * cr]
}

/// (Y, Cb, Cr) in 8-bit code units to unclamped RGB.
pub fn ycbcr_codes_to_rgb(y: f64, cb: f64, cr: f64) -> [f64; 3] {
    let luma = (y - Y_OFFSET) / Y_RANGE;
    let pb = (cb - C_OFFSET) / C_RANGE;
    let pr = (cr - C_OFFSET) / C_RANGE;
    let r = luma + 2.0 * (1.0 - KR) * pr;
    let b = luma + 2.0 * (1.0 - KB) * pb;
    let g = (luma - KR * r - KB * b) / KG;
    [r, g, b]
}

/// Converts a YUV frame to RGB, clamping to [0, 1]. RGB input is returned as is.
pub fn yuv_to_rgb(frame: &Frame) -> Frame {
    if frame.color_space() == ColorSpace::Rgb {
        return frame.clone();
    }
    let n = frame.width() * frame.height();
    let (ys, us, vs) = (frame.plane(0), frame.plane(1), frame.plane(2));
    let mut data = vec![0f32; 3 * n];
    for i in 0..n {
        let rgb = ycbcr_codes_to_rgb(
            ys[i] as f64 * 255.0,
            us[i] as f64 * 255.0,
            vs[i] as f64 * 255.0,
        );
        for c in 0..3 {
            data[c * n + i] = rgb[c].clamp(0.0, 1.0) as f32;
        }
    }
    let out = Frame::from_planar(frame.width(), frame.height(), data, ColorSpace::Rgb)
        .expect("same dims");
    match frame.native_planes() {
        Some(p) => out.with_native(p.clone()),
        None => out,
    }
}

/// Converts an RGB frame to full-resolution YUV. YUV input is returned as is.
pub fn rgb_to_yuv(frame: &Frame) -> Frame {
    if frame.color_space() == ColorSpace::Yuv {
        return frame.clone();
    }
    let n = frame.width() * frame.height();
    let (rs, gs, bs) = (frame.plane(0), frame.plane(1), frame.plane(2));
    let mut data = vec![0f32; 3 * n];
    for i in 0..n {
        let codes = rgb_to_ycbcr_codes(rs[i] as f64, gs[i] as f64, bs[i] as f64);
        for c in 0..3 {
            data[c * n + i] = (codes[c] / 255.0) as f32;
        }
    }
    let out = Frame::from_planar(frame.width(), frame.height(), data, ColorSpace::Yuv)
        .expect("same dims");
    match frame.native_planes() {
        Some(p) => out.with_native(p.clone()),
        None => out,
    }
}

/// Bilinear 2x upsampling of a chroma plane with center siting and edge clamp.
pub fn upsample_chroma(plane: &[f64], cw: usize, ch: usize) -> Vec<f64> {
    let (w, h) = (cw * 2, ch * 2);
    let mut out = vec![0.0; w * h];
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, cw as isize - 1) as usize;
        let y = y.clamp(0, ch as isize - 1) as usize;
        plane[y * cw + x]
    };
    for y in 0..h {
        // output sample y sits at chroma coordinate (y - 0.5) / 2
        let cy = (y as isize - 1).div_euclid(2);
        let fy = if y % 2 == 0 { 0.75 } else { 0.25 };
        for x in 0..w {
            let cx = (x as isize - 1).div_euclid(2);
            let fx = if x % 2 == 0 { 0.75 } else { 0.25 };
            let top = (1.0 - fx) * at(cx, cy) + fx * at(cx + 1, cy);
            let bot = (1.0 - fx) * at(cx, cy + 1) + fx * at(cx + 1, cy + 1);
            out[y * w + x] = (1.0 - fy) * top + fy * bot;
        }
    }
    out
}

/// 2x2 box average.
pub fn downsample_chroma(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let (cw, ch) = (w / 2, h / 2);
    let mut out = vec![0.0; cw * ch];
    for y in 0..ch {
        for x in 0..cw {
            let s = plane[2 * y * w + 2 * x]
                + plane[2 * y * w + 2 * x + 1]
                + plane[(2 * y + 1) * w + 2 * x]
                + plane[(2 * y + 1) * w + 2 * x + 1];
            out[y * cw + x] = s / 4.0;
        }
    }
    out
}

/// Float 4:2:0 planes (values in [0, 1]) of any frame with even dims. Native
/// planes are used verbatim when present.
pub fn yuv420_planes_f64(frame: &Frame) -> [Vec<f64>; 3] {
    if let Some(p) = frame.native_planes() {
        if (p.width, p.height) == frame.dims() {
            let conv = |v: &[u8]| v.iter().map(|&b| b as f64 / 255.0).collect::<Vec<_>>();
            return [conv(&p.y), conv(&p.u), conv(&p.v)];
        }
    }
    let yuv = rgb_to_yuv(frame);
    let (w, h) = yuv.dims();
    let f = |c: usize| yuv.plane(c).iter().map(|&v| v as f64).collect::<Vec<_>>();
    [f(0), downsample_chroma(&f(1), w, h), downsample_chroma(&f(2), w, h)]
}

/// Quantizes a frame to native 8-bit 4:2:0 planes.
pub fn to_yuv420_planes(frame: &Frame) -> Yuv420Planes {
    let [y, u, v] = yuv420_planes_f64(frame);
    let q = |p: Vec<f64>| p.into_iter().map(|x| (x * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    Yuv420Planes {
        width: frame.width(),
        height: frame.height(),
        y: q(y),
        u: q(u),
        v: q(v),
    }
}

/// Builds the full-resolution YUV working copy for native planes.
pub fn frame_from_planes(planes: Yuv420Planes) -> Frame {
    let (w, h) = (planes.width, planes.height);
    let (cw, ch) = planes.chroma_dims();
    let to_f = |v: &[u8]| v.iter().map(|&b| b as f64 / 255.0).collect::<Vec<_>>();
    let u = upsample_chroma(&to_f(&planes.u), cw, ch);
    let v = upsample_chroma(&to_f(&planes.v), cw, ch);
    let mut data = Vec::with_capacity(3 * w * h);
    data.extend(planes.y.iter().map(|&b| b as f32 / 255.0));
    data.extend(u.iter().map(|&x| x as f32));
    data.extend(v.iter().map(|&x| x as f32));
    Frame::from_planar(w, h, data, ColorSpace::Yuv)
        .expect("plane sizes match")
        .with_native(planes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    // Hand application of the limited-range matrix: R = G = B = (Y - 16) / 219
    // when both chroma codes sit at 128.
    #[test]
    fn nominal_gray_maps_to_luma_ramp_value() {
        let rgb = ycbcr_codes_to_rgb(128.0, 128.0, 128.0);
        let expected = (128.0 - 16.0) / 219.0; // 0.511415...
        for v in rgb {
            assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(expected, 0.5114, epsilon = 1e-3);
    }

    #[test]
    fn limited_range_black_and_white() {
        for v in ycbcr_codes_to_rgb(16.0, 128.0, 128.0) {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
        for v in ycbcr_codes_to_rgb(235.0, 128.0, 128.0) {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn primaries_hit_the_documented_codes() {
        let red = rgb_to_ycbcr_codes(1.0, 0.0, 0.0);
        assert_abs_diff_eq!(red[0], 16.0 + 219.0 * KR, epsilon = 1e-9);
        assert_abs_diff_eq!(red[2], 240.0, epsilon = 1e-9);
        let blue = rgb_to_ycbcr_codes(0.0, 0.0, 1.0);
        assert_abs_diff_eq!(blue[1], 240.0, epsilon = 1e-9);
    }

    #[test]
    fn chroma_resampling_preserves_constants() {
        let plane = vec![0.3; 16];
        assert!(upsample_chroma(&plane, 4, 4).iter().all(|v| (v - 0.3).abs() < 1e-12));
        assert!(downsample_chroma(&plane, 4, 4).iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn rgb_yuv_round_trip(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let f = Frame::from_fn(8, 6, |_, _, _| rng.random::<f32>());
            let yuv = rgb_to_yuv(&f);
            prop_assert!(yuv.is_valid());
            let back = rgb_to_yuv(&yuv_to_rgb(&yuv));
            prop_assert!(back.max_abs_diff(&yuv) <= 2.0 / 255.0);
            // through native 8-bit planes the rounding stays below 2/255 in RGB
            let planes = to_yuv420_planes(&f);
            prop_assert_eq!(planes.y.len(), 48);
            let rgb = yuv_to_rgb(&yuv);
            prop_assert!(rgb.max_abs_diff(&f) < 1e-5);
        }
    }

    #[test]
    fn quantized_444_round_trip_within_two_codes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let f = Frame::from_fn(16, 16, |_, _, _| rng.random::<f32>());
        let yuv = rgb_to_yuv(&f);
        let q: Vec<f32> = yuv.data().iter().map(|v| (v * 255.0).round() / 255.0).collect();
        let yq = Frame::from_planar(16, 16, q, ColorSpace::Yuv).unwrap();
        assert!(yuv_to_rgb(&yq).max_abs_diff(&f) <= 2.0 / 255.0);
    }
}
