//! Optimization: Adam-family updates, parameter EMA, schedules and the
//! logged, checkpointed training loop.

mod optim;
mod trainer;

pub use optim::{clip_global_norm, ema_update, global_norm, Optimizer, OptimizerKind, BETA1, BETA2, EPSILON};
pub use trainer::{eval_indices, read_log, LogRow, StepStats, TrainSummary, Trainer, CHECKPOINT_FILE, LOG_CSV_HEADER, LOG_FILE};

use crate::error::{Error, Result};
use crate::Float;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: Float,
    pub lr_decay: Float,
    pub batch_size: usize,
    pub total_steps: u64,
    pub beta: Float,
    pub beta_anneal_steps: u64,
    pub free_bits: Float,
    pub ema_decay: Float,
    pub seed: u64,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    pub clip_grad: bool,
    pub clip_norm: Float,
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adamax,
            lr: 1e-3,
            lr_decay: 0.999995,
            batch_size: 64,
            total_steps: 20_000,
            beta: 1.0,
            beta_anneal_steps: 4_000,
            free_bits: 0.01,
            ema_decay: 0.999,
            seed: 0,
            eval_every: 100,
            checkpoint_every: 1_000,
            clip_grad: false,
            clip_norm: 100.0,
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if !(self.lr > 0.0) {
            return fail(format!("train.lr must be > 0, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!("train.lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return fail(format!("train.ema_decay must be in [0, 1), got {}", self.ema_decay));
        }
        if self.beta_anneal_steps > self.total_steps {
            return fail(format!("train.beta_anneal_steps {} exceeds total_steps {}", self.beta_anneal_steps, self.total_steps));
        }
        if !(self.beta >= 0.0) || !(self.free_bits >= 0.0) {
            return fail("train.beta and train.free_bits must be >= 0".into());
        }
        if self.batch_size == 0 || self.total_steps == 0 || self.eval_every == 0 || self.checkpoint_every == 0 {
            return fail("train.batch_size, total_steps, eval_every and checkpoint_every must be > 0".into());
        }
        if self.checkpoint_every % self.eval_every != 0 {
            return fail(format!(
                "train.checkpoint_every ({}) must be a multiple of train.eval_every ({})",
                self.checkpoint_every, self.eval_every
            ));
        }
        if self.clip_grad && !(self.clip_norm > 0.0) {
            return fail("train.clip_norm must be > 0".into());
        }
        Ok(())
    }
}

/// Linear warm-up of β: `beta_final * min(1, step / anneal_steps)`.
pub fn beta_schedule(step: u64, beta_final: Float, anneal_steps: u64) -> Float {
    if anneal_steps == 0 {
        return beta_final;
    }
    beta_final * (step as Float / anneal_steps as Float).min(1.0)
}

/// Exponential decay: `lr0 * decay^step`.
pub fn lr_schedule(step: u64, lr0: Float, decay: Float) -> Float {
    lr0 * decay.powf(step as Float)
}
