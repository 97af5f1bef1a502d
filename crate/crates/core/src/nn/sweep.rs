//! Model-scaling sweeps on disk: one config file per point plus a JSON
//! manifest that later runs fill in with checkpoints and RD results.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::eval::{run_eval, EvalOptions};
use super::job::{run_train_job, TrainJob};
use super::model::{build_model, count_parameters, ParamReport};
use super::training::TrainOptions;
use crate::coder::CoderBackend;
use crate::config::{enumerate_sweep, ModelConfig, SweepAxis};
use crate::data::{DatasetManifest, VideoSequence};
use crate::error::{NvcError, Result};
use crate::metrics::bd_rate_by_sequence;
use crate::train::{DeskScale, TrainingStage};

pub const SWEEP_FILE: &str = "sweep.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub scale: f64,
    /// Relative to the sweep directory.
    pub config: PathBuf,
    pub parameters: Option<ParamReport>,
    pub result: Option<SweepResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub checkpoints: Vec<PathBuf>,
    pub rd_csv: PathBuf,
    /// Mean per-sequence BD-rate against the first point, in percent.
    pub bd_rate_vs_first: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(SWEEP_FILE)).map_err(|e| NvcError::Manifest(format!("{}: {e}", dir.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(SWEEP_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Writes `point_<i>.json` per multiplier and the manifest. Parameter counts
/// need the model built, so they are optional.
pub fn write_sweep(base: &ModelConfig, axis: SweepAxis, scales: &[f64], dir: &Path, count: bool) -> Result<SweepManifest> {
    let configs = enumerate_sweep(base, axis, scales)?;
    std::fs::create_dir_all(dir)?;
    let mut points = Vec::new();
    for (i, (cfg, &scale)) in configs.iter().zip(scales).enumerate() {
        let file = PathBuf::from(format!("point_{i}.json"));
        cfg.save(dir.join(&file))?;
        let parameters = if count { Some(count_parameters(&build_model(cfg, 0)?)) } else { None };
        points.push(SweepPoint { scale, config: file, parameters, result: None });
    }
    let m = SweepManifest { axis, points };
    m.save(dir)?;
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub lambda_indices: Vec<usize>,
    pub schedule: Vec<TrainingStage>,
    pub scale: DeskScale,
    pub clips: usize,
    pub clip_len: usize,
    pub patch: usize,
    pub options: TrainOptions,
    pub eval: EvalOptions,
}

/// Trains every point at every λ on `train`, evaluates on the dataset at
/// `eval_root` and records the results in the manifest.
pub fn run_sweep(dir: &Path, train: &[VideoSequence], eval_root: &Path, run: &SweepRun, backend: &(dyn CoderBackend + Sync)) -> Result<SweepManifest> {
    DatasetManifest::load(eval_root)?;
    let mut manifest = SweepManifest::load(dir)?;
    let mut first_rows = None;
    for i in 0..manifest.points.len() {
        let config = ModelConfig::load(dir.join(&manifest.points[i].config))?;
        let out = dir.join(format!("point_{i}"));
        let mut checkpoints = Vec::new();
        for &l in &run.lambda_indices {
            let job = TrainJob {
                config: config.clone(),
                lambda_index: l,
                schedule: run.schedule.clone(),
                scale: run.scale,
                clips: run.clips,
                clip_len: run.clip_len,
                patch: run.patch,
                options: run.options.clone(),
                checkpoint: out.join(format!("lambda{l}.safetensors")),
            };
            run_train_job(&job, train.to_vec())?;
            checkpoints.push(job.checkpoint);
        }
        let eval = EvalOptions { out_dir: out.join("eval"), anchor: None, label: format!("{} x{}", manifest.axis, manifest.points[i].scale), ..run.eval.clone() };
        let report = run_eval(&checkpoints, eval_root, backend, &eval)?;
        let bd = match &first_rows {
            None => {
                first_rows = Some(report.rows.clone());
                None
            }
            Some(anchor) => match bd_rate_by_sequence(anchor, &report.rows, eval.metric) {
                Ok(s) => Some(s.mean),
                Err(e) => {
                    log::warn!("no BD-rate for point {i}: {e}");
                    None
                }
            },
        };
        manifest.points[i].result = Some(SweepResult { checkpoints, rd_csv: eval.out_dir.join("rd.csv"), bd_rate_vs_first: bd });
        manifest.save(dir)?;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let base = ModelConfig::tiny();
        let m = write_sweep(&base, SweepAxis::Tcm, &[1.0, 2.0], dir.path(), true).unwrap();
        assert_eq!(SweepManifest::load(dir.path()).unwrap(), m);
        let p0 = m.points[0].parameters.as_ref().unwrap();
        let p1 = m.points[1].parameters.as_ref().unwrap();
        assert!(p1.per_module["tcm"] > p0.per_module["tcm"]);
        assert_eq!(p1.per_module["contextual_enc_dec"], p0.per_module["contextual_enc_dec"]);
        assert_eq!(ModelConfig::load(dir.path().join(&m.points[0].config)).unwrap(), base);
        assert!(write_sweep(&base, SweepAxis::Tcm, &[2.0, 1.0], dir.path(), false).is_err());
    }

    #[test]
    fn every_axis_changes_only_its_module() {
        let base = ModelConfig::tiny();
        let p0 = count_parameters(&build_model(&base, 0).unwrap());
        for axis in [SweepAxis::MotionEd, SweepAxis::MotionEm, SweepAxis::CtxEd, SweepAxis::CtxEm, SweepAxis::Tcm] {
            let cfg = &enumerate_sweep(&base, axis, &[2.0]).unwrap()[0];
            let p1 = count_parameters(&build_model(cfg, 0).unwrap());
            for (module, &n) in &p0.per_module {
                if module == axis.module_name() {
                    assert!(p1.per_module[module] > n, "{axis}");
                } else {
                    assert_eq!(p1.per_module[module], n, "{axis} changed {module}");
                }
            }
        }
    }
}
