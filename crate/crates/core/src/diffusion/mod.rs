//! Noise schedules, the training objective, the optimizer, and samplers.

mod adan;
mod data;
mod loss;
mod sample;
mod schedule;
mod train;

pub use adan::{Adan, AdanConfig};
pub use data::{canonicalize_motion, load_beat_windows, load_training_windows, prepare_condition};
pub use loss::{
    loss_foot, loss_joints, loss_simple, loss_terms, loss_vel, motions_to_tensor, tensor_to_motions,
    total_loss, LossBreakdown, LossTerms, LossWeights, TensorFk,
};
pub use sample::{
    ddim_step, ddim_timesteps, ddpm_step, guided_denoise, sample, sample_motions, sample_with,
    SamplerConfig, SamplerMethod,
};
pub(crate) use sample::{gaussian, STREAM_CONSTRAINT};
pub use schedule::{make_schedule, DiffusionSchedule, ScheduleKind, BETA_MAX, BETA_MIN, COSINE_OFFSET};
pub use train::{
    conditional_loss, features_tensor, DiffusionModel, OptimizerKind, StepLog, TrainConfig, Trainer,
    TrainingSample,
};
