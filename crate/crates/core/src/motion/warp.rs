use super::map::FeatureMap;
use crate::data::Frame;

/// Backward bilinear warp: `out(x, y) = src(x + u, y + v)` with the sample
/// position clamped to the map (border replication).
pub fn warp(src: &FeatureMap, flow: &FeatureMap) -> FeatureMap {
    assert_eq!(flow.channels, 2, "flow has two channels");
    assert_eq!((flow.height, flow.width), (src.height, src.width));
    let (h, w) = (src.height, src.width);
    let mut out = FeatureMap::zeros(src.channels, h, w);
    for y in 0..h {
        for x in 0..w {
            let sx = (x as f32 + flow.at(0, y, x)).clamp(0.0, (w - 1) as f32);
            let sy = (y as f32 + flow.at(1, y, x)).clamp(0.0, (h - 1) as f32);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let (ax, ay) = (sx - x0 as f32, sy - y0 as f32);
            for c in 0..src.channels {
                let top = (1.0 - ax) * src.at(c, y0, x0) + ax * src.at(c, y0, x1);
                let bot = (1.0 - ax) * src.at(c, y1, x0) + ax * src.at(c, y1, x1);
                *out.at_mut(c, y, x) = (1.0 - ay) * top + ay * bot;
            }
        }
    }
    out
}

/// Color-wheel rendering: hue encodes direction, saturation magnitude
/// relative to `max_magnitude` (the field's maximum when `None`).
pub fn flow_to_rgb(flow: &FeatureMap, max_magnitude: Option<f32>) -> Frame {
    let (h, w) = (flow.height, flow.width);
    let mag = |y: usize, x: usize| flow.at(0, y, x).hypot(flow.at(1, y, x));
    let peak = max_magnitude.unwrap_or_else(|| {
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .map(|(y, x)| mag(y, x))
            .fold(0.0, f32::max)
    });
    let peak = peak.max(1e-6);
    Frame::from_fn(w, h, |c, y, x| {
        let angle = flow.at(1, y, x).atan2(flow.at(0, y, x));
        let hue = (angle / std::f32::consts::TAU + 1.0).fract() * 6.0;
        let sat = (mag(y, x) / peak).min(1.0);
        let sector = hue.floor() as i32;
        let f = hue - sector as f32;
        let (q, t) = (1.0 - sat * f, 1.0 - sat * (1.0 - f));
        let p = 1.0 - sat;
        let rgb = match sector {
            0 => [1.0, t, p],
            1 => [q, 1.0, p],
            2 => [p, 1.0, t],
            3 => [p, q, 1.0],
            4 => [t, p, 1.0],
            _ => [1.0, p, q],
        };
        rgb[c]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> FeatureMap {
        FeatureMap::from_fn(1, h, w, |_, _, x| x as f32)
    }

    #[test]
    fn zero_flow_is_identity() {
        let src = FeatureMap::from_fn(3, 7, 9, |c, y, x| (c * 31 + y * 7 + x) as f32 * 0.01);
        let out = warp(&src, &FeatureMap::zeros(2, 7, 9));
        assert_eq!(out, src);
    }

    #[test]
    fn unit_flow_shifts_ramp_with_replicated_border() {
        let src = ramp(4, 6);
        let out = warp(&src, &FeatureMap::constant_flow(4, 6, 1.0, 0.0));
        for y in 0..4 {
            let row: Vec<f32> = (0..6).map(|x| out.at(0, y, x)).collect();
            assert_eq!(row, vec![1.0, 2.0, 3.0, 4.0, 5.0, 5.0]);
        }
    }

    #[test]
    fn half_pixel_flow_averages_neighbours() {
        // columns alternate between 0.2 and 0.8
        let src = FeatureMap::from_fn(1, 3, 8, |_, _, x| if x % 2 == 0 { 0.2 } else { 0.8 });
        let out = warp(&src, &FeatureMap::constant_flow(3, 8, 0.5, 0.0));
        for x in 0..7 {
            assert!((out.at(0, 1, x) - 0.5).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn warp_is_linear_in_source(seed in 0u64..100, a in -1.0f32..1.0, b in -1.0f32..1.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s1 = FeatureMap::from_fn(2, 9, 11, |_, _, _| rng.random::<f32>());
            let s2 = FeatureMap::from_fn(2, 9, 11, |_, _, _| rng.random::<f32>());
            let flow = FeatureMap::from_fn(2, 9, 11, |_, _, _| rng.random_range(-4.0..4.0));
            let lhs = warp(&s1.zip_with(&s2, |p, q| a * p + b * q), &flow);
            let rhs = warp(&s1, &flow).zip_with(&warp(&s2, &flow), |p, q| a * p + b * q);
            prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-6);
        }
    }

    #[test]
    fn color_wheel_is_white_at_rest() {
        let f = flow_to_rgb(&FeatureMap::zeros(2, 4, 4), Some(1.0));
        assert!(f.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        let g = flow_to_rgb(&FeatureMap::constant_flow(2, 2, 1.0, 0.0), None);
        assert!(g.is_valid());
        assert!((g.get(0, 0, 0) - 1.0).abs() < 1e-6 && g.get(1, 0, 0) < 1e-6);
    }
}
