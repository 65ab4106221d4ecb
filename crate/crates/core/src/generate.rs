//! Ancestral sampling from a context-adapted model.

use rand::Rng;

use crate::context::ContextValue;
use crate::data::{BOS, EOS};
use crate::error::{Error, Result};
use crate::math::softmax;
use crate::model::Model;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    /// Sampled ids, excluding the begin sentinel and any end sentinel.
    pub tokens: Vec<usize>,
    pub text: String,
    /// Whether sampling stopped on the end sentinel rather than the length cap.
    pub finished: bool,
}

/// Sample up to `max_len` tokens from `softmax(logits / temperature)` under
/// `value`. Deterministic for a given seed; small temperatures approach greedy
/// decoding.
pub fn generate(
    model: &Model,
    value: &ContextValue,
    max_len: usize,
    temperature: f64,
    seed: u64,
) -> Result<Generation> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Argument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut r = rng::substream(seed, rng::GENERATE, 0);
    let cell = model.adapt(value)?;
    let mut state = model.initial_state();
    let mut prev = BOS;
    let mut tokens = Vec::new();
    let mut finished = false;
    while tokens.len() < max_len {
        let (next, logits) = model.step(&cell, prev, &state)?;
        state = next;
        let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
        let id = sample_index(&softmax(&scaled), r.random::<f64>());
        if id == EOS {
            finished = true;
            break;
        }
        tokens.push(id);
        prev = id;
    }
    let text = model.vocab.render(&tokens)?;
    Ok(Generation {
        tokens,
        text,
        finished,
    })
}

/// Inverse-CDF draw: the first index whose cumulative mass exceeds `u`.
fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the total; fall back to the last index with mass
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}
