//! WebAssembly bindings for three of the codec's pure-Rust tools: BD-rate
//! between two RD curves, the discretized Laplace model behind the rate
//! estimate, and the structure/detail split that drives the two motion
//! branches. `www/index.html` is the page that drives them.

use nvc_core::entropy::{laplace_bits, laplace_pmf_table};
use nvc_core::metrics::{bd_rate, RdCurve, RdPoint};
use nvc_core::motion::{decompose_structure_detail, FeatureMap};
use nvc_core::NvcError;
use wasm_bindgen::prelude::*;

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("expected {expected} RGBA bytes for the image, got {got}")]
    ImageSize { expected: usize, got: usize },
    #[error(transparent)]
    Core(#[from] NvcError),
}

/// Reads one `bpp quality` pair per line; commas also separate, and blank
/// lines or lines starting with `#` are skipped.
pub fn parse_curve(label: &str, text: &str) -> Result<RdCurve, DemoError> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        let [bpp, quality] = fields[..] else {
            return Err(DemoError::Parse { line: i + 1, msg: format!("expected two numbers, found {}", fields.len()) });
        };
        let num = |s: &str| s.parse::<f64>().map_err(|e| DemoError::Parse { line: i + 1, msg: format!("`{s}`: {e}") });
        points.push(RdPoint { bpp: num(bpp)?, quality: num(quality)?, lambda_index: points.len() });
    }
    Ok(RdCurve::new(label, points)?)
}

pub fn bd_rate_of_text(anchor: &str, test: &str) -> Result<f64, DemoError> {
    Ok(bd_rate(&parse_curve("anchor", anchor)?, &parse_curve("test", test)?)?)
}

/// Symbol probabilities for offsets `-r..=r` from the mean.
pub fn pmf(sigma: f64) -> Vec<f64> {
    laplace_pmf_table(sigma).1
}

/// Splits an RGBA image into its low-pass structure and high-pass detail.
/// Returns both as RGBA, structure first, with detail shown around mid-grey.
pub fn decompose_rgba(rgba: &[u8], width: usize, height: usize) -> Result<Vec<u8>, DemoError> {
    let expected = width * height * 4;
    if rgba.len() != expected {
        return Err(DemoError::ImageSize { expected, got: rgba.len() });
    }
    let map = FeatureMap::from_fn(3, height, width, |c, y, x| rgba[(y * width + x) * 4 + c] as f32 / 255.0);
    let pair = decompose_structure_detail(&map);
    let mut out = Vec::with_capacity(2 * expected);
    for (m, offset) in [(&pair.structure, 0.0), (&pair.detail, 0.5)] {
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    out.push(((m.at(c, y, x) + offset).clamp(0.0, 1.0) * 255.0).round() as u8);
                }
                out.push(255);
            }
        }
    }
    Ok(out)
}

fn js_err(e: DemoError) -> JsError {
    JsError::new(&e.to_string())
}

/// BD-rate in percent of `test` against `anchor`, each given as text.
#[wasm_bindgen(js_name = bdRate)]
pub fn bd_rate_js(anchor: &str, test: &str) -> Result<f64, JsError> {
    bd_rate_of_text(anchor, test).map_err(js_err)
}

#[wasm_bindgen(js_name = laplacePmf)]
pub fn laplace_pmf_js(sigma: f64) -> Vec<f64> {
    pmf(sigma)
}

#[wasm_bindgen(js_name = laplaceBits)]
pub fn laplace_bits_js(q: f64, mu: f64, sigma: f64) -> f64 {
    laplace_bits(q, mu, sigma)
}

#[wasm_bindgen(js_name = decompose)]
pub fn decompose_js(rgba: &[u8], width: usize, height: usize) -> Result<Vec<u8>, JsError> {
    decompose_rgba(rgba, width, height).map_err(js_err)
}
