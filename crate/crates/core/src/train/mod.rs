//! Rate-distortion objectives, frame weighting and the staged schedule.
//! The optimizer loop itself lives in `nn::training`.

mod loss;
mod schedule;

pub use loss::{cascaded_loss, check_lambda, compute_loss, frame_weight, LossBreakdown, LossKind, FRAME_WEIGHTS};
pub use schedule::{
    plan_schedule, read_schedule, reference_schedule, write_schedule, DeskScale, Scope, StagePlan, TrainingStage,
};
