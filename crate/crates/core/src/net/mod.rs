//! The conditional denoising transformer, its parameters, and checkpoints.

mod checkpoint;
mod denoiser;
pub mod ops;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{
    file_hash, read_container, write_container, Checkpoint, RngState, TrainingState, CHECKPOINT_SCHEMA,
};
pub use denoiser::{film, pose_features, timestep_embedding, ConditionEncoding, Denoiser, POSE_FEATURES};
pub(crate) use denoiser::{block_specs, create_params, Block, Fetch};
pub use params::{Init, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullCondMode {
    LearnedEmbedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub cond_dim: usize,
    pub dropout_rate: f64,
    pub max_len: usize,
    pub mlp_ratio: usize,
    /// Width of the raw per-frame condition features (51 for COCO-17 poses).
    pub cond_input_dim: usize,
    pub num_timesteps: usize,
    pub null_cond: NullCondMode,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 256,
            num_blocks: 3,
            num_heads: 4,
            cond_dim: 128,
            dropout_rate: 0.1,
            max_len: 150,
            mlp_ratio: 4,
            cond_input_dim: POSE_FEATURES,
            num_timesteps: 1000,
            null_cond: NullCondMode::LearnedEmbedding,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small model for CPU experiments (about 1M parameters).
    pub fn tiny() -> Self {
        Self {
            hidden_dim: 128,
            cond_dim: 64,
            dropout_rate: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.hidden_dim % 2 != 0 || self.cond_dim % 2 != 0 {
            return Err(Error::Config("hidden_dim and cond_dim must be even".into()));
        }
        if self.num_blocks == 0 {
            return Err(Error::Config("num_blocks must be at least 1".into()));
        }
        if self.max_len == 0 || self.mlp_ratio == 0 || self.cond_input_dim == 0 || self.cond_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}
