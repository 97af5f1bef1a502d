use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bdrate::{bd_rate, RdCurve, RdPoint};
use super::channels::ChannelBitrateReport;
use crate::error::{NvcError, Result};

/// One row of an RD CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdRow {
    pub sequence: String,
    pub lambda_index: usize,
    pub bpp: f64,
    pub psnr_rgb: f64,
    pub psnr_yuv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityMetric {
    Rgb,
    Yuv,
}

impl RdRow {
    fn quality(&self, metric: QualityMetric) -> f64 {
        match metric {
            QualityMetric::Rgb => self.psnr_rgb,
            QualityMetric::Yuv => self.psnr_yuv,
        }
    }
}

pub fn write_rd_csv(path: impl AsRef<Path>, rows: &[RdRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rd_csv(path: impl AsRef<Path>) -> Result<Vec<RdRow>> {
    let mut r = csv::Reader::from_path(path.as_ref()).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> NvcError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => NvcError::Io(io),
        other => NvcError::Manifest(format!("rd csv: {other:?}")),
    }
}

/// One curve per sequence, keyed by sequence name.
pub fn curves_by_sequence(rows: &[RdRow], metric: QualityMetric) -> Result<BTreeMap<String, RdCurve>> {
    let mut grouped: BTreeMap<String, Vec<RdPoint>> = BTreeMap::new();
    for r in rows {
        grouped.entry(r.sequence.clone()).or_default().push(RdPoint {
            bpp: r.bpp,
            quality: r.quality(metric),
            lambda_index: r.lambda_index,
        });
    }
    grouped.into_iter().map(|(k, pts)| Ok((k.clone(), RdCurve::new(k, pts)?))).collect()
}

/// Curve of per-lambda means over all sequences.
pub fn averaged_curve(rows: &[RdRow], metric: QualityMetric, label: &str) -> Result<RdCurve> {
    let mut acc: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.lambda_index).or_insert((0.0, 0.0, 0));
        e.0 += r.bpp;
        e.1 += r.quality(metric);
        e.2 += 1;
    }
    let points = acc
        .into_iter()
        .map(|(l, (b, q, n))| RdPoint { bpp: b / n as f64, quality: q / n as f64, lambda_index: l })
        .collect();
    RdCurve::new(label, points)
}

/// BD-rate of every sequence present in both sets, and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdRateSummary {
    pub per_sequence: BTreeMap<String, f64>,
    pub mean: f64,
}

pub fn bd_rate_by_sequence(anchor: &[RdRow], test: &[RdRow], metric: QualityMetric) -> Result<BdRateSummary> {
    let a = curves_by_sequence(anchor, metric)?;
    let t = curves_by_sequence(test, metric)?;
    let mut per_sequence = BTreeMap::new();
    for (name, tc) in &t {
        if let Some(ac) = a.get(name) {
            per_sequence.insert(name.clone(), bd_rate(ac, tc)?);
        }
    }
    if per_sequence.is_empty() {
        return Err(NvcError::Manifest("anchor and test share no sequence".into()));
    }
    let mean = per_sequence.values().sum::<f64>() / per_sequence.len() as f64;
    Ok(BdRateSummary { per_sequence, mean })
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const M: f64 = 56.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn axis_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

fn svg_frame(title: &str, xlabel: &str, ylabel: &str, x: (f64, f64), y: (f64, f64)) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(s, r#"<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - M, W - 16.0, H - M);
    let _ = writeln!(s, r#"<line x1="{M}" y1="{}" x2="{M}" y2="30" stroke="black"/>"#, H - M);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, W / 2.0, H - 14.0);
    let _ = writeln!(s, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{ylabel}</text>"#, H / 2.0, H / 2.0);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (px, py) = (M + f * (W - M - 16.0), H - M - f * (H - M - 30.0));
        let _ = writeln!(s, r#"<text x="{px}" y="{}" text-anchor="middle">{:.3}</text>"#, H - M + 16.0, x.0 + f * (x.1 - x.0));
        let _ = writeln!(s, r#"<text x="{}" y="{py}" text-anchor="end">{:.2}</text>"#, M - 4.0, y.0 + f * (y.1 - y.0));
    }
    s
}

fn project(v: f64, r: (f64, f64), lo: f64, hi: f64) -> f64 {
    lo + (v - r.0) / (r.1 - r.0) * (hi - lo)
}

/// Quality-over-rate plot of several curves as a standalone SVG document.
pub fn rd_plot_svg(curves: &[RdCurve], quality_label: &str) -> String {
    let all = || curves.iter().flat_map(|c| c.points.iter());
    let xr = axis_range(all().map(|p| p.bpp));
    let yr = axis_range(all().map(|p| p.quality));
    let mut s = svg_frame("Rate-distortion", "bpp", quality_label, xr, yr);
    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", project(p.bpp, xr, M, W - 16.0), project(p.quality, yr, H - M, 30.0)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for p in &pts {
            let (x, y) = p.split_once(',').unwrap();
            let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, W - 150.0, H - M - 16.0 * (curves.len() - i) as f64, c.label);
    }
    s.push_str("</svg>\n");
    s
}

/// Bar chart of the `top` largest channel ratios.
pub fn channel_plot_svg(report: &ChannelBitrateReport, top: usize) -> String {
    let bars = report.top(top);
    let ymax = bars.first().map_or(1.0, |b| b.1).max(1e-9);
    let title = format!("{:?} channel bitrate ratio (top {})", report.kind, bars.len());
    let mut s = svg_frame(&title, "rank", "ratio", (1.0, bars.len().max(1) as f64), (0.0, ymax));
    let step = (W - M - 16.0) / bars.len().max(1) as f64;
    for (i, &(_, r)) in bars.iter().enumerate() {
        let top_y = project(r, (0.0, ymax), H - M, 30.0);
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{top_y:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4"/>"##,
            M + i as f64 * step,
            (step * 0.8).max(0.5),
            H - M - top_y
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(seq: &str, scale: f64) -> Vec<RdRow> {
        (0..4)
            .map(|l| RdRow {
                sequence: seq.into(),
                lambda_index: l,
                bpp: scale * 0.05 * 2f64.powi(l as i32),
                psnr_rgb: 30.0 + 2.0 * l as f64,
                psnr_yuv: 32.0 + 2.0 * l as f64,
            })
            .collect()
    }

    #[test]
    fn csv_roundtrip_and_bdrate() {
        let dir = tempfile::tempdir().unwrap();
        let anchor: Vec<RdRow> = [rows("a", 1.0), rows("b", 1.0)].concat();
        let test: Vec<RdRow> = [rows("a", 0.5), rows("b", 0.5)].concat();
        let p = dir.path().join("rd.csv");
        write_rd_csv(&p, &anchor).unwrap();
        let back = read_rd_csv(&p).unwrap();
        assert_eq!(back, anchor);
        let s = bd_rate_by_sequence(&back, &test, QualityMetric::Rgb).unwrap();
        assert_eq!(s.per_sequence.len(), 2);
        assert!((s.mean + 50.0).abs() < 1e-9);
    }

    #[test]
    fn averaging_and_plots() {
        let all: Vec<RdRow> = [rows("a", 1.0), rows("b", 3.0)].concat();
        let c = averaged_curve(&all, QualityMetric::Yuv, "avg").unwrap();
        assert_eq!(c.points.len(), 4);
        assert!((c.points[0].bpp - 0.1).abs() < 1e-12);
        let svg = rd_plot_svg(&[c], "PSNR (dB)");
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    }
}
