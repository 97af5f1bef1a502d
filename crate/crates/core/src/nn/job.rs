//! Training one model per λ from a set of sequences, checkpointing after
//! every stage so an interrupted run resumes at the next one.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use super::model::{build_model, CodecModel};
use super::training::{run_schedule, ClipPool, TrainOptions, TrainReport};
use crate::config::ModelConfig;
use crate::data::{ClipSampler, VideoSequence};
use crate::error::{invalid, NvcError, Result};
use crate::train::{plan_schedule, DeskScale, TrainingStage};
use crate::LAMBDAS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    pub config: ModelConfig,
    pub lambda_index: usize,
    pub schedule: Vec<TrainingStage>,
    pub scale: DeskScale,
    pub clips: usize,
    pub clip_len: usize,
    pub patch: usize,
    /// `lambda` is overwritten from `lambda_index`.
    pub options: TrainOptions,
    pub checkpoint: PathBuf,
}

/// Trains (or resumes) the job on clips cut from `sequences`.
pub fn run_train_job(job: &TrainJob, sequences: Vec<VideoSequence>) -> Result<(CodecModel, TrainReport)> {
    let lambda = *LAMBDAS
        .get(job.lambda_index)
        .ok_or_else(|| invalid("lambda_index", format!("{} is out of range", job.lambda_index)))?;
    let seed = job.options.seed;
    let (model, start) = if job.checkpoint.exists() {
        let (m, meta) = load_checkpoint(&job.checkpoint)?;
        if meta.config != job.config || meta.lambda_index != job.lambda_index {
            return Err(NvcError::Checkpoint(format!("{} belongs to a different job", job.checkpoint.display())));
        }
        log::info!("resuming {} at stage {}", job.checkpoint.display(), meta.stage_cursor + 1);
        (m, meta.stage_cursor)
    } else {
        (build_model(&job.config, seed)?, 0)
    };
    let plans = plan_schedule(&job.schedule, job.scale)?;
    let mut sampler = ClipSampler::new(sequences, job.clip_len, job.patch, seed)?;
    let pool = ClipPool::sample(&mut sampler, job.clips)?;
    let opts = TrainOptions { lambda, ..job.options.clone() };
    let meta = |cursor| CheckpointMeta { config: job.config.clone(), lambda_index: job.lambda_index, stage_cursor: cursor, seed };
    let report = run_schedule(&model, &plans, &pool, &opts, start, |o| save_checkpoint(&model, &job.checkpoint, &meta(o.index + 1)))?;
    save_checkpoint(&model, &job.checkpoint, &meta(plans.len()))?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::toy_sequences;
    use crate::train::{LossKind, Scope};

    fn job(path: PathBuf) -> TrainJob {
        let stage = |loss, scope, frames| TrainingStage { frames, scope, loss, lr: 1e-4, epochs: 1.0 };
        TrainJob {
            config: ModelConfig::tiny(),
            lambda_index: 1,
            schedule: vec![stage(LossKind::MeD, Scope::Inter, 2), stage(LossKind::RecRD, Scope::Recon, 2), stage(LossKind::All, Scope::All, 2)],
            scale: DeskScale { steps_per_epoch: 1.0, lr_scale: 1.0, max_frames: 2 },
            clips: 4,
            clip_len: 3,
            patch: 64,
            options: TrainOptions { flow_pretrain_steps: 1, intra_pretrain_steps: 1, eval_clips: 1, eval_frames: 2, seed: 3, ..Default::default() },
            checkpoint: path,
        }
    }

    #[test]
    fn job_checkpoints_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let mut j = job(dir.path().join("l1.safetensors"));
        let seqs = || toy_sequences(2, 64, 64, 4, 1);
        let (_, report) = run_train_job(&j, seqs()).unwrap();
        assert_eq!(report.stages.len(), 3);
        let meta = crate::nn::checkpoint::read_meta(&j.checkpoint).unwrap();
        assert_eq!((meta.stage_cursor, meta.lambda_index), (3, 1));

        // A finished job runs no stages on resume.
        let (_, again) = run_train_job(&j, seqs()).unwrap();
        assert!(again.stages.is_empty());

        j.lambda_index = 2;
        assert!(matches!(run_train_job(&j, seqs()), Err(NvcError::Checkpoint(_))));
        j.lambda_index = 9;
        j.checkpoint = dir.path().join("other.safetensors");
        assert!(matches!(run_train_job(&j, seqs()), Err(NvcError::InvalidConfig { .. })));
    }
}
