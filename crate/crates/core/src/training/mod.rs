//! Maximum-likelihood training: losses with exact gradients, recurrent
//! dropout, Adam, and the training loop.

mod adam;
mod dropout;
mod loss;
mod trainer;

pub use adam::{adam_step, adam_update, clip_global_norm, OptimizerState};
pub use dropout::{batch_dropout_masks, recurrent_dropout_mask};
pub use loss::{
    batch_loss, batch_sequences, cross_entropy_loss, sampled_softmax_loss, LossOptions,
    NegativeSampler, Sequence,
};
pub use trainer::{train, MetricsLog, MetricsRow, NullSink, ProgressSink, TrainOutcome};

use crate::error::{Error, Result};
use crate::model::Precision;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Recurrent-dropout keep probability in (0, 1].
    pub keep_prob: f64,
    /// Fresh dropout mask per time step rather than per sequence.
    pub dropout_per_step: bool,
    /// Negative samples per step; 0 trains with the full softmax.
    pub sampled_softmax: usize,
    /// Global-norm clipping threshold; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Steps between dev evaluations (0 evaluates only at the end).
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            max_steps: 1000,
            keep_prob: 1.0,
            dropout_per_step: false,
            sampled_softmax: 0,
            clip_norm: 5.0,
            seed: 1,
            precision: Precision::F64,
            eval_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config(format!(
                "keep_prob must be in (0, 1], got {}",
                self.keep_prob
            )));
        }
        if self.sampled_softmax >= vocab_size && self.sampled_softmax > 0 {
            return Err(Error::Config(format!(
                "sampled_softmax ({}) must be below the vocabulary size ({vocab_size})",
                self.sampled_softmax
            )));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::Config(
                "learning_rate and batch_size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::Config("clip_norm must be non-negative".into()));
        }
        Ok(())
    }
}
