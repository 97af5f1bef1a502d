use serde::{Deserialize, Serialize};

use crate::data::color::yuv420_planes_f64;
use crate::data::Frame;
use crate::error::{NvcError, Result};

/// PSNR reported for identical signals.
pub const PSNR_CAP: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    pub db: f64,
    /// Set when the error was zero and `db` is the cap.
    pub lossless: bool,
}

pub fn psnr_from_mse(mse: f64) -> Psnr {
    if mse <= 0.0 {
        return Psnr { db: PSNR_CAP, lossless: true };
    }
    Psnr { db: (10.0 * (1.0 / mse).log10()).min(PSNR_CAP), lossless: false }
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

fn check_dims(a: &Frame, b: &Frame) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(NvcError::DimMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// PSNR over all three RGB channels with peak 1.
pub fn psnr_rgb(a: &Frame, b: &Frame) -> Result<Psnr> {
    check_dims(a, b)?;
    let err = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(psnr_from_mse(err))
}

/// Per-plane PSNR of the 4:2:0 representations, in (Y, U, V) order.
pub fn psnr_yuv_planes(a: &Frame, b: &Frame) -> Result<[Psnr; 3]> {
    check_dims(a, b)?;
    let (pa, pb) = (yuv420_planes_f64(a), yuv420_planes_f64(b));
    Ok([0, 1, 2].map(|c| psnr_from_mse(mse(&pa[c], &pb[c]))))
}

/// 6:1:1 weighted mean of plane PSNRs.
pub fn compound_psnr(y: f64, u: f64, v: f64) -> f64 {
    (6.0 * y + u + v) / 8.0
}

pub fn psnr_yuv_compound(a: &Frame, b: &Frame) -> Result<Psnr> {
    let [y, u, v] = psnr_yuv_planes(a, b)?;
    Ok(Psnr {
        db: compound_psnr(y.db, u.db, v.db),
        lossless: y.lossless && u.lossless && v.lossless,
    })
}
