use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use crate::error::{invalid, NvcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Motion estimation, motion encoder-decoder and motion entropy model.
    Inter,
    /// Temporal context mining plus the contextual encoder-decoder and
    /// entropy model.
    Recon,
    All,
}

impl Scope {
    /// Modules whose parameters are updated. The intra codec only trains in
    /// cascaded stages; everywhere else it stays at its pretrained values.
    pub fn modules(self, loss: LossKind) -> Vec<&'static str> {
        let inter = ["motion_estimation", "motion_enc_dec", "motion_entropy"];
        let recon = ["tcm", "contextual_enc_dec", "contextual_entropy"];
        match self {
            Scope::Inter => inter.to_vec(),
            Scope::Recon => recon.to_vec(),
            Scope::All => {
                let mut m = [inter.as_slice(), recon.as_slice()].concat();
                if loss == LossKind::CascadedAll {
                    m.push("intra");
                }
                m
            }
        }
    }
}

/// One row of the staged schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingStage {
    pub frames: usize,
    pub scope: Scope,
    pub loss: LossKind,
    pub lr: f64,
    pub epochs: f64,
}

impl TrainingStage {
    pub fn validate(&self) -> Result<()> {
        let scope_ok = match self.loss {
            LossKind::MeD | LossKind::MeRD => self.scope == Scope::Inter,
            LossKind::RecD | LossKind::RecRD => self.scope == Scope::Recon,
            LossKind::All | LossKind::CascadedAll => true,
        };
        if !scope_ok {
            return Err(invalid("scope", format!("{:?} cannot train with loss {:?}", self.scope, self.loss)));
        }
        if self.frames < 2 {
            return Err(invalid("frames", "every stage codes at least one P-frame"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr", "must be positive"));
        }
        if !(self.epochs > 0.0 && self.epochs.is_finite()) {
            return Err(invalid("epochs", "must be positive"));
        }
        Ok(())
    }
}

fn row(frames: usize, scope: Scope, loss: LossKind, lr: f64, epochs: f64) -> TrainingStage {
    TrainingStage { frames, scope, loss, lr, epochs }
}

/// The full 21-stage RGB schedule.
pub fn reference_schedule() -> Vec<TrainingStage> {
    use LossKind::{CascadedAll, MeD, MeRD, RecD, RecRD};
    use Scope::{Inter, Recon};
    const ALL: Scope = Scope::All;
    const L_ALL: LossKind = LossKind::All;
    vec![
        row(2, Inter, MeD, 1e-4, 2.0),
        row(2, Inter, MeRD, 1e-4, 6.0),
        row(2, Recon, RecD, 5e-5, 6.0),
        row(3, Inter, MeRD, 1e-4, 2.0),
        row(3, Recon, RecD, 5e-5, 3.0),
        row(4, Recon, RecD, 5e-5, 3.0),
        row(6, Recon, RecD, 5e-5, 3.0),
        row(2, Recon, RecRD, 5e-5, 6.0),
        row(3, Recon, RecRD, 5e-5, 3.0),
        row(4, Recon, RecRD, 5e-5, 3.0),
        row(6, Recon, RecRD, 5e-5, 3.0),
        row(2, ALL, L_ALL, 5e-5, 15.0),
        row(3, ALL, L_ALL, 5e-5, 15.0),
        row(4, ALL, L_ALL, 5e-5, 15.0),
        row(6, ALL, L_ALL, 5e-5, 10.0),
        row(6, ALL, L_ALL, 1e-5, 10.0),
        row(6, ALL, L_ALL, 5e-6, 5.0),
        row(6, ALL, CascadedAll, 1e-5, 2.0),
        row(6, ALL, CascadedAll, 1e-6, 2.0),
        row(6, ALL, CascadedAll, 5e-7, 2.0),
        row(6, ALL, CascadedAll, 1e-7, 4.0),
    ]
}

/// How a schedule is shrunk to desk scale: an epoch becomes a fixed number
/// of optimizer steps and learning rates are multiplied by `lr_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeskScale {
    pub steps_per_epoch: f64,
    pub lr_scale: f64,
    /// Upper bound on rollout length, applied to every stage.
    pub max_frames: usize,
}

impl Default for DeskScale {
    fn default() -> Self {
        DeskScale { steps_per_epoch: 4.0, lr_scale: 10.0, max_frames: 6 }
    }
}

/// A stage with concrete step count and learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub index: usize,
    pub stage: TrainingStage,
    pub steps: usize,
    pub lr: f64,
}

pub fn plan_schedule(stages: &[TrainingStage], scale: DeskScale) -> Result<Vec<StagePlan>> {
    if scale.max_frames < 2 {
        return Err(invalid("max_frames", "must be at least 2"));
    }
    stages
        .iter()
        .enumerate()
        .map(|(index, s)| {
            s.validate()?;
            let mut stage = s.clone();
            stage.frames = stage.frames.min(scale.max_frames);
            Ok(StagePlan {
                index,
                steps: ((s.epochs * scale.steps_per_epoch).round() as usize).max(1),
                lr: s.lr * scale.lr_scale,
                stage,
            })
        })
        .collect()
}

/// Schedule file: CSV with columns `frames,scope,loss,lr,epochs`.
pub fn read_schedule(path: impl AsRef<Path>) -> Result<Vec<TrainingStage>> {
    let mut r = csv::Reader::from_path(path.as_ref()).map_err(|e| NvcError::Manifest(format!("schedule: {e}")))?;
    let stages: Vec<TrainingStage> = r
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| NvcError::Manifest(format!("schedule: {e}")))?;
    for s in &stages {
        s.validate()?;
    }
    Ok(stages)
}

pub fn write_schedule(path: impl AsRef<Path>, stages: &[TrainingStage]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| NvcError::Manifest(format!("schedule: {e}")))?;
    for s in stages {
        w.serialize(s).map_err(|e| NvcError::Manifest(format!("schedule: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_rows_are_valid() {
        let s = reference_schedule();
        assert_eq!(s.len(), 21);
        for st in &s {
            st.validate().unwrap();
        }
        assert_eq!(s.iter().filter(|r| r.loss == LossKind::CascadedAll).count(), 4);
    }

    #[test]
    fn scope_and_loss_must_agree() {
        let bad = row(2, Scope::Recon, LossKind::MeD, 1e-4, 1.0);
        assert!(bad.validate().is_err());
        let bad = row(2, Scope::Inter, LossKind::RecRD, 1e-4, 1.0);
        assert!(bad.validate().is_err());
        let bad = row(1, Scope::All, LossKind::CascadedAll, 1e-4, 1.0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("schedule.csv");
        write_schedule(&p, &reference_schedule()).unwrap();
        assert_eq!(read_schedule(&p).unwrap(), reference_schedule());
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("frames,scope,loss,lr,epochs\n2,inter,meD,"));
    }

    #[test]
    fn desk_plan() {
        let plan = plan_schedule(&reference_schedule(), DeskScale { steps_per_epoch: 2.0, lr_scale: 1.0, max_frames: 4 }).unwrap();
        assert_eq!(plan[0].steps, 4);
        assert_eq!(plan[11].steps, 30);
        assert!(plan.iter().all(|p| p.stage.frames <= 4));
        assert!(Scope::All.modules(LossKind::All).iter().all(|m| *m != "intra"));
        assert!(Scope::All.modules(LossKind::CascadedAll).contains(&"intra"));
    }
}
