//! SGD with a cosine learning-rate schedule, patience-based stopping on
//! validation loss, and LIDC checkpoints.

mod checkpoint;
mod schedule;
mod trainer;

pub use checkpoint::Checkpoint;
pub use schedule::{cosine_lr, sgd_step};
pub use trainer::{evaluate_model, history_csv, train_loop, EvalResult, HistoryRow, StopReason, TrainOutcome};

use crate::error::{LidError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_min: f64,
    /// Cosine horizon; `None` means `max_epochs × steps per epoch`.
    pub total_steps: Option<u64>,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive non-improving evaluations tolerated before stopping.
    pub patience: usize,
    /// Smallest validation-loss decrease that counts as an improvement.
    pub min_delta: f64,
    pub seed: u64,
    /// Group utterances of similar length into the same batch.
    pub bucket_by_length: bool,
    /// Random crop of training utterances to at most this many frames.
    pub crop_frames: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_init: 0.005,
            lr_min: 1e-4,
            total_steps: None,
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            min_delta: 1e-3,
            seed: 0,
            bucket_by_length: false,
            crop_frames: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_init && self.lr_init.is_finite()) {
            return Err(LidError::Config(format!(
                "need 0 < train.lr_min ({}) <= train.lr ({})",
                self.lr_min, self.lr_init
            )));
        }
        if self.total_steps == Some(0) {
            return Err(LidError::Config("train.total_steps must be >= 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(LidError::Config("train.batch_size and train.max_epochs must be >= 1".into()));
        }
        if !(self.min_delta >= 0.0) {
            return Err(LidError::Config("train.min_delta must be >= 0".into()));
        }
        if self.crop_frames == Some(0) {
            return Err(LidError::Config("train.crop_frames must be >= 1 when set".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, examples: usize) -> u64 {
        examples.div_ceil(self.batch_size) as u64
    }

    pub fn horizon(&self, examples: usize) -> u64 {
        self.total_steps
            .unwrap_or((self.max_epochs as u64 * self.steps_per_epoch(examples)).max(1))
    }

    pub fn lr_at(&self, step: u64, examples: usize) -> f64 {
        cosine_lr(step, self.lr_init, self.lr_min, self.horizon(examples))
    }
}
