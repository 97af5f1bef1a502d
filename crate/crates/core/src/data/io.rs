use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::color::{frame_from_planes, to_yuv420_planes, yuv_to_rgb};
use super::frame::{ColorSpace, Frame, VideoSequence, Yuv420Planes};
use crate::error::{NvcError, Result};

/// Reads `n_frames` planar 8-bit 4:2:0 frames. Each frame keeps its native
/// planes; the float working copy is full-resolution YUV.
pub fn read_yuv420(path: impl AsRef<Path>, width: usize, height: usize, n_frames: usize) -> Result<VideoSequence> {
    let path = path.as_ref();
    if width % 2 != 0 || height % 2 != 0 || width == 0 || height == 0 {
        return Err(NvcError::OddDimensions { width, height });
    }
    let frame_bytes = width * height * 3 / 2;
    let expected = (frame_bytes * n_frames) as u64;
    let actual = std::fs::metadata(path)?.len();
    if actual < expected {
        return Err(NvcError::TruncatedFile { expected, actual });
    }
    let mut file = File::open(path)?;
    let (cw, ch) = (width / 2, height / 2);
    let mut frames = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let mut y = vec![0u8; width * height];
        let mut u = vec![0u8; cw * ch];
        let mut v = vec![0u8; cw * ch];
        file.read_exact(&mut y)?;
        file.read_exact(&mut u)?;
        file.read_exact(&mut v)?;
        frames.push(frame_from_planes(Yuv420Planes {
            width,
            height,
            y,
            u,
            v,
        }));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());
    VideoSequence::new(name, 30.0, frames)
}

/// Writes frames as planar 8-bit 4:2:0. Frames with native planes are written
/// verbatim, others are converted and rounded.
pub fn write_yuv420<'a>(path: impl AsRef<Path>, frames: impl IntoIterator<Item = &'a Frame>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for f in frames {
        if f.width() % 2 != 0 || f.height() % 2 != 0 {
            return Err(NvcError::OddDimensions {
                width: f.width(),
                height: f.height(),
            });
        }
        let planes = match f.native_planes() {
            Some(p) if (p.width, p.height) == f.dims() => p.clone(),
            _ => to_yuv420_planes(f),
        };
        out.write_all(&planes.y)?;
        out.write_all(&planes.u)?;
        out.write_all(&planes.v)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Frame> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Ok(Frame::from_fn(w, h, |c, y, x| raw[(y * w + x) * 3 + c] as f32 / 255.0))
}

pub fn write_png(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    let rgb = yuv_to_rgb(frame);
    let (w, h) = rgb.dims();
    let mut buf = vec![0u8; w * h * 3];
    for c in 0..3 {
        for (i, v) in rgb.plane(c).iter().enumerate() {
            buf[i * 3 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    image::save_buffer(path, &buf, w as u32, h as u32, image::ColorType::Rgb8)?;
    Ok(())
}

/// Replicate-pads on the right and bottom up to multiples of `m`.
pub fn pad_to_multiple(frame: &Frame, m: usize) -> (Frame, (usize, usize)) {
    let m = m.max(1);
    let (w, h) = frame.dims();
    let (pw, ph) = (w.div_ceil(m) * m, h.div_ceil(m) * m);
    if (pw, ph) == (w, h) {
        return (frame.clone(), (w, h));
    }
    let mut data = Vec::with_capacity(3 * pw * ph);
    for c in 0..3 {
        let plane = frame.plane(c);
        for y in 0..ph {
            let row = &plane[y.min(h - 1) * w..][..w];
            data.extend_from_slice(row);
            data.extend(std::iter::repeat_n(row[w - 1], pw - w));
        }
    }
    let padded = Frame::from_planar(pw, ph, data, frame.color_space()).expect("padded dims");
    (padded, (w, h))
}

/// Inverse of [`pad_to_multiple`].
pub fn crop_to(frame: &Frame, dims: (usize, usize)) -> Result<Frame> {
    if frame.dims() == dims {
        return Ok(frame.clone());
    }
    frame.crop_region(0, 0, dims.0, dims.1)
}

pub(crate) fn ensure_rgb(frame: Frame) -> Frame {
    match frame.color_space() {
        ColorSpace::Rgb => frame,
        ColorSpace::Yuv => yuv_to_rgb(&frame),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_file_reads_zero_luma() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.yuv");
        std::fs::write(&p, vec![0u8; 64 * 64 * 3 / 2 * 2]).unwrap();
        let seq = read_yuv420(&p, 64, 64, 2).unwrap();
        assert_eq!(seq.len(), 2);
        for f in seq.frames() {
            assert!(f.plane(0).iter().all(|&v| v == 0.0));
            assert!(f.native_planes().unwrap().y.iter().all(|&b| b == 0));
        }
    }

    #[test]
    fn short_file_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.yuv");
        std::fs::write(&p, vec![0u8; 64 * 64 * 3 / 2 * 2]).unwrap();
        match read_yuv420(&p, 64, 64, 3) {
            Err(NvcError::TruncatedFile { expected, actual }) => {
                assert_eq!(expected, 18432);
                assert_eq!(actual, 12288);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn odd_dimensions_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.yuv");
        std::fs::write(&p, vec![0u8; 10000]).unwrap();
        assert!(matches!(read_yuv420(&p, 63, 64, 1), Err(NvcError::OddDimensions { .. })));
    }

    #[test]
    fn ramp_plane_matches_bytes() {
        let (w, h) = (64usize, 64usize);
        let mut bytes = Vec::new();
        for t in 0..2 {
            bytes.extend((0..w * h).map(|i| ((i + t * 7) % 256) as u8));
            bytes.extend((0..w * h / 4).map(|i| (i % 251) as u8));
            bytes.extend((0..w * h / 4).map(|i| (255 - i % 256) as u8));
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ramp.yuv");
        std::fs::write(&p, &bytes).unwrap();
        let seq = read_yuv420(&p, w, h, 2).unwrap();
        for (t, f) in seq.frames().iter().enumerate() {
            let planes = f.native_planes().unwrap();
            for i in 0..w * h {
                let oracle = ((i + t * 7) % 256) as f64 / 255.0;
                assert!((planes.y[i] as f64 / 255.0 - oracle).abs() <= 1e-9);
                assert!((f.plane(0)[i] as f64 - oracle).abs() <= 1e-7);
            }
        }
        // lossless write-back of native planes
        let q = dir.path().join("copy.yuv");
        write_yuv420(&q, seq.frames()).unwrap();
        assert_eq!(std::fs::read(&q).unwrap(), bytes);
    }

    #[test]
    fn padding_arithmetic() {
        let f = Frame::filled(100, 100, [0.2, 0.4, 0.6]);
        let (p, dims) = pad_to_multiple(&f, 64);
        assert_eq!(p.dims(), (128, 128));
        assert_eq!(dims, (100, 100));
        let g = Frame::filled(128, 128, [0.1, 0.1, 0.1]);
        let (q, _) = pad_to_multiple(&g, 64);
        assert_eq!(q, g);
    }

    proptest! {
        #[test]
        fn crop_inverts_pad(w in 1usize..70, h in 1usize..70, m in 1usize..20, seed in 0u64..50) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let f = Frame::from_fn(w, h, |_, _, _| rng.random::<f32>());
            let (p, dims) = pad_to_multiple(&f, m);
            prop_assert_eq!(p.width() % m, 0);
            prop_assert_eq!(p.height() % m, 0);
            // replicated border
            prop_assert_eq!(p.get(1, p.height() - 1, p.width() - 1), f.get(1, h - 1, w - 1));
            prop_assert_eq!(crop_to(&p, dims).unwrap(), f);
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = Frame::from_fn(9, 7, |c, y, x| ((c * 50 + y * 20 + x * 3) % 256) as f32 / 255.0);
        let p = dir.path().join("f.png");
        write_png(&p, &f).unwrap();
        let g = read_png(&p).unwrap();
        assert!(g.max_abs_diff(&f) < 1e-6);
    }
}
