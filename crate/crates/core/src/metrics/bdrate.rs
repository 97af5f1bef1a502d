use serde::{Deserialize, Serialize};

use crate::error::{NvcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub bpp: f64,
    pub quality: f64,
    pub lambda_index: usize,
}

/// Points sorted by rate, with quality strictly increasing along with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    pub label: String,
    pub points: Vec<RdPoint>,
}

impl RdCurve {
    pub fn new(label: impl Into<String>, mut points: Vec<RdPoint>) -> Result<Self> {
        let label = label.into();
        if points.len() < 2 {
            return Err(NvcError::DegenerateCurve(format!("`{label}` has {} points", points.len())));
        }
        if points.iter().any(|p| !(p.bpp > 0.0) || !p.bpp.is_finite() || !p.quality.is_finite()) {
            return Err(NvcError::DegenerateCurve(format!("`{label}` needs positive rates and finite quality")));
        }
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        for w in points.windows(2) {
            if w[1].bpp <= w[0].bpp {
                return Err(NvcError::DegenerateCurve(format!("`{label}` repeats rate {}", w[0].bpp)));
            }
            if w[1].quality <= w[0].quality {
                return Err(NvcError::DegenerateCurve(format!("`{label}` quality is not increasing with rate")));
            }
        }
        if points.len() < 4 {
            log::warn!("rd curve `{label}` has only {} points; BD-rate is usually taken over 4", points.len());
        }
        Ok(RdCurve { label, points })
    }

    fn knots(&self) -> (Vec<f64>, Vec<f64>) {
        (self.points.iter().map(|p| p.quality).collect(), self.points.iter().map(|p| p.bpp.log10()).collect())
    }

    /// Monotone cubic interpolant of log10(rate) over quality.
    pub fn log_rate_interpolant(&self) -> Pchip {
        let (x, y) = self.knots();
        Pchip::new(x, y)
    }

    pub fn quality_range(&self) -> (f64, f64) {
        (self.points[0].quality, self.points.last().unwrap().quality)
    }
}

/// Shape-preserving piecewise cubic Hermite interpolant (Fritsch-Carlson
/// slopes with the usual non-centered three-point end conditions).
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        assert!(n >= 2 && y.len() == n);
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
            return Pchip { x, y, d };
        }
        for k in 1..n - 1 {
            if delta[k - 1] * delta[k] > 0.0 {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
            }
        }
        d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
        d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        Pchip { x, y, d }
    }

    fn segment(&self, t: f64) -> usize {
        self.x.partition_point(|&v| v <= t).clamp(1, self.x.len() - 1) - 1
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.segment(t);
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }

    /// Exact integral over `[a, b]` inside the knot range. Each piece is a
    /// cubic, so Simpson's rule on each piece is exact.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        let mut cuts = vec![a];
        cuts.extend(self.x.iter().copied().filter(|&v| v > a && v < b));
        cuts.push(b);
        cuts.windows(2)
            .map(|w| {
                let (l, r) = (w[0], w[1]);
                (r - l) / 6.0 * (self.eval(l) + 4.0 * self.eval(0.5 * (l + r)) + self.eval(r))
            })
            .sum()
    }
}

fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

/// Average rate difference of `test` against `anchor` at equal quality, in
/// percent. The mean log10 rate gap over the shared quality interval is
/// turned back into a ratio; negative means `test` saves bits.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64> {
    let (a_lo, a_hi) = anchor.quality_range();
    let (t_lo, t_hi) = test.quality_range();
    let (lo, hi) = (a_lo.max(t_lo), a_hi.min(t_hi));
    if !(hi > lo) {
        return Err(NvcError::NoOverlap);
    }
    let ia = anchor.log_rate_interpolant().integrate(lo, hi);
    let it = test.log_rate_interpolant().integrate(lo, hi);
    let mean_gap = (it - ia) / (hi - lo);
    Ok((10f64.powf(mean_gap) - 1.0) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(label: &str, pts: &[(f64, f64)]) -> RdCurve {
        RdCurve::new(
            label,
            pts.iter().enumerate().map(|(i, &(bpp, quality))| RdPoint { bpp, quality, lambda_index: i }).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_and_half_rate() {
        let a = curve("a", &[(0.05, 30.0), (0.1, 32.5), (0.2, 34.7), (0.4, 36.4)]);
        assert_eq!(bd_rate(&a, &a).unwrap(), 0.0);
        let half = curve("h", &a.points.iter().map(|p| (p.bpp / 2.0, p.quality)).collect::<Vec<_>>());
        let r = bd_rate(&a, &half).unwrap();
        assert!((r + 50.0).abs() < 1e-12, "{r}");
    }

    #[test]
    fn interpolant_hits_knots_and_stays_monotone() {
        let a = curve("a", &[(0.05, 30.0), (0.07, 30.2), (0.2, 34.7), (0.4, 36.4)]);
        let p = a.log_rate_interpolant();
        for pt in &a.points {
            assert!((p.eval(pt.quality) - pt.bpp.log10()).abs() < 1e-12);
        }
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let v = p.eval(30.0 + 6.4 * i as f64 / 1000.0);
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }

    #[test]
    fn degenerate_curves() {
        let pts = vec![RdPoint { bpp: 0.1, quality: 30.0, lambda_index: 0 }, RdPoint { bpp: 0.2, quality: 29.0, lambda_index: 1 }];
        assert!(matches!(RdCurve::new("x", pts), Err(NvcError::DegenerateCurve(_))));
        let a = curve("a", &[(0.1, 30.0), (0.2, 31.0)]);
        let b = curve("b", &[(0.1, 32.0), (0.2, 33.0)]);
        assert!(matches!(bd_rate(&a, &b), Err(NvcError::NoOverlap)));
    }
}
