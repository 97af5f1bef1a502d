use serde::{Deserialize, Serialize};

use crate::error::{invalid, NvcError, Result};
use crate::LAMBDAS;

/// Periodic P-frame weights, indexed by `(p_index - 1) % 4`.
pub const FRAME_WEIGHTS: [f64; 4] = [0.5, 1.2, 0.5, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "meD")]
    MeD,
    #[serde(rename = "meRD")]
    MeRD,
    #[serde(rename = "recD")]
    RecD,
    #[serde(rename = "recRD")]
    RecRD,
    #[serde(rename = "all")]
    All,
    #[serde(rename = "cascaded_all")]
    CascadedAll,
}

impl std::str::FromStr for LossKind {
    type Err = NvcError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| NvcError::InvalidKind(s.to_string()))
    }
}

/// Per-frame distortion and rate terms. Rates are bits per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub d_m: f64,
    pub d_y: f64,
    pub r_m: f64,
    pub r_y: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_valid(&self) -> bool {
        [self.d_m, self.d_y, self.r_m, self.r_y, self.total]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Weight of the `p_index`-th P-frame of a GOP (1-based).
pub fn frame_weight(p_index: usize) -> Result<f64> {
    if p_index == 0 {
        return Err(NvcError::InvalidIndex("P-frame index starts at 1".into()));
    }
    Ok(FRAME_WEIGHTS[(p_index - 1) % 4])
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if LAMBDAS.contains(&lambda) {
        Ok(())
    } else {
        Err(invalid("lambda", format!("{lambda} is not one of {LAMBDAS:?}")))
    }
}

/// Single-frame objective for every kind except `CascadedAll`, which averages
/// whole rollouts (see [`cascaded_loss`]).
pub fn compute_loss(kind: LossKind, w: f64, lambda: f64, b: &LossBreakdown) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(match kind {
        LossKind::MeD => w * lambda * b.d_m,
        LossKind::MeRD => w * lambda * b.d_m + b.r_m,
        LossKind::RecD => w * lambda * b.d_y,
        LossKind::RecRD => w * lambda * b.d_y + b.r_y,
        LossKind::All => w * lambda * b.d_y + b.r_m + b.r_y,
        LossKind::CascadedAll => {
            return Err(NvcError::InvalidKind("cascaded_all is a multi-frame loss; use cascaded_loss".into()))
        }
    })
}

/// Mean of per-frame losses over a T-frame rollout, the intra frame included.
pub fn cascaded_loss(per_frame: &[f64]) -> Result<f64> {
    if per_frame.len() < 2 {
        return Err(invalid("frames", "a cascaded rollout needs at least 2 frames"));
    }
    Ok(per_frame.iter().sum::<f64>() / per_frame.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_identities() {
        let b = LossBreakdown { d_m: 0.01, r_m: 0.2, ..Default::default() };
        assert_eq!(compute_loss(LossKind::MeRD, 1.0, 85.0, &b).unwrap(), 85.0 * 0.01 + 0.2);
        let b = LossBreakdown { d_y: 0.005, r_m: 0.1, r_y: 0.3, ..Default::default() };
        assert!((compute_loss(LossKind::All, 1.2, 170.0, &b).unwrap() - 1.42).abs() < 1e-12);
        assert_eq!(cascaded_loss(&[1.42, 1.42]).unwrap(), 1.42);
        assert!(matches!(compute_loss(LossKind::CascadedAll, 1.0, 85.0, &b), Err(NvcError::InvalidKind(_))));
        assert!(compute_loss(LossKind::All, 1.0, 100.0, &b).is_err());
    }

    #[test]
    fn weights_cycle() {
        let w: Vec<f64> = (1..=9).map(|i| frame_weight(i).unwrap()).collect();
        assert_eq!(w, vec![0.5, 1.2, 0.5, 0.9, 0.5, 1.2, 0.5, 0.9, 0.5]);
        assert!(frame_weight(0).is_err());
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("meRD".parse::<LossKind>().unwrap(), LossKind::MeRD);
        assert_eq!("cascaded_all".parse::<LossKind>().unwrap(), LossKind::CascadedAll);
        assert!(matches!("mse".parse::<LossKind>(), Err(NvcError::InvalidKind(_))));
    }
}
