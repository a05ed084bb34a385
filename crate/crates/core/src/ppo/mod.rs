//! Parallel multi-robot experience collection, generalized advantage
//! estimation, clipped-surrogate PPO updates, Adam, the two-stage
//! curriculum, and checkpointing.

mod adam;
mod checkpoint;
mod gae;
mod rollout;
mod trainer;
mod update;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};
pub use gae::compute_gae;
pub use rollout::{
    collect_rollouts, collect_rollouts_scripted, EnvRuntime, EpisodeRecord, IterationStats,
};
pub use trainer::{run_curriculum, CurveRow, TrainState, CURVE_HEADER};
pub use update::{ppo_update, surrogate_loss, PpoStats};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// PPO hyperparameters. Defaults are the paper-profile settings; the desk
/// profile overrides several of them for CI-speed training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_epsilon: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub grad_norm_clip: f64,
    /// Ticks of experience per robot per iteration.
    pub rollout_length: usize,
    pub entropy_coeff: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip_epsilon: 0.2,
            epochs: 4,
            minibatch_size: 1024,
            lr_policy: 3e-4,
            lr_value: 3e-4,
            grad_norm_clip: 5.0,
            rollout_length: 256,
            entropy_coeff: 0.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err("gamma must be in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err("lambda must be in [0, 1]".into());
        }
        if self.clip_epsilon <= 0.0 {
            return Err("clip_epsilon must be > 0".into());
        }
        if self.minibatch_size == 0 || self.rollout_length == 0 {
            return Err("minibatch_size and rollout_length must be > 0".into());
        }
        Ok(())
    }
}

/// One contiguous run of transitions for a single robot in a single world.
/// Episode boundaries inside the run are marked by done flags; `bootstrap`
/// is the value estimate of the state after the final transition (unused
/// when that transition is terminal).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub bootstrap: f64,
}

/// Pooled transitions for one PPO iteration, flattened in deterministic
/// (world, robot, tick) order.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    /// Normalized observations, one row per transition.
    pub obs: Array2<f64>,
    /// Pre-clamp Gaussian samples.
    pub actions: Array2<f64>,
    pub log_probs: Array1<f64>,
    pub rewards: Array1<f64>,
    pub values: Array1<f64>,
    pub dones: Vec<bool>,
    pub segments: Vec<Segment>,
    /// Filled by `compute_gae`.
    pub advantages: Array1<f64>,
    pub returns: Array1<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}
