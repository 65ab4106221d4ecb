//! The four-member model family and its inference path.
//!
//! A [`Model`] bundles configuration, context schema, vocabulary and
//! parameters. Inference first calls [`Model::adapt`] once per context to
//! materialize `W'`, `b'` and the output-bias offset, then steps the cell with
//! those cached arrays, so an adapted model costs the same per token as an
//! unadapted one.

mod cell;
mod checkpoint;
mod config;
mod params;

use std::fmt;
use std::str::FromStr;

pub use cell::{cell_step, compute_adaptation, AdaptedCell, CellState};
pub(crate) use cell::StepTrace;
pub use checkpoint::{load_checkpoint, save_checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{BiasMode, ModelConfig, Variant};
pub use params::ModelParams;

use crate::context::{encode_raw, ContextSchema, ContextValue, EncoderTrace};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::math::log_softmax;
use crate::rng;
use crate::tensor::axpy;

/// Storage precision for parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" | "64" => Ok(Precision::F64),
            "f32" | "32" => Ok(Precision::F32),
            _ => Err(Error::Config(format!("unknown precision {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub schema: ContextSchema,
    pub vocab: Vocabulary,
    pub params: ModelParams,
}

/// Side products of [`Model::adapt`] needed to backpropagate into the
/// context encoder and the class-bias table.
#[derive(Clone, Debug, Default)]
pub(crate) struct AdaptTrace {
    pub encoder: Option<EncoderTrace>,
    pub class_weights: Vec<(usize, f64)>,
}

impl Model {
    pub fn new(
        config: ModelConfig,
        schema: ContextSchema,
        vocab: Vocabulary,
        params: ModelParams,
    ) -> Result<Self> {
        config.validate(&schema)?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} entries but vocab_size is {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        params.check_layout(&config, &schema)?;
        Ok(Model {
            config,
            schema,
            vocab,
            params,
        })
    }

    /// Freshly initialized model; randomness comes from the `init` substream
    /// of `seed`.
    pub fn init(
        config: ModelConfig,
        schema: ContextSchema,
        vocab: Vocabulary,
        seed: u64,
    ) -> Result<Self> {
        config.validate(&schema)?;
        let mut r = rng::substream(seed, rng::INIT, 0);
        let params = ModelParams::init(&config, &schema, &mut r);
        Model::new(config, schema, vocab, params)
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    /// Context embedding `c`, or `None` when the variant does not use one.
    pub fn context_embedding(&self, value: &ContextValue) -> Result<Option<Vec<f64>>> {
        Ok(self.encode_context(value)?.map(|t| t.embedding))
    }

    fn encode_context(&self, value: &ContextValue) -> Result<Option<EncoderTrace>> {
        match &self.params.encoder {
            Some(enc) if self.config.uses_embedding() => {
                let raw = encode_raw(&self.schema, value)?;
                Ok(Some(enc.trace(&raw)?))
            }
            _ => Ok(None),
        }
    }

    /// Precompute `W'`, `b'` and the output-bias offset for one context.
    pub fn adapt(&self, value: &ContextValue) -> Result<AdaptedCell> {
        Ok(self.adapt_traced(value)?.0)
    }

    pub(crate) fn adapt_traced(&self, value: &ContextValue) -> Result<(AdaptedCell, AdaptTrace)> {
        let p = &self.params;
        let cfg = &self.config;
        let encoder = self.encode_context(value)?;
        let c: Vec<f64> = encoder
            .as_ref()
            .map(|t| t.embedding.clone())
            .unwrap_or_default();

        let mut weight = p.recurrent.clone();
        if cfg.variant == Variant::FactorCell {
            let (Some(zl), Some(zr)) = (&p.left_basis, &p.right_basis) else {
                return Err(Error::Config("factor_cell parameters lack the bases".into()));
            };
            let a = compute_adaptation(&c, zl, zr)?;
            weight.add_assign(&a)?;
        }
        let mut bias = p.recurrent_bias.data().to_vec();
        if let (true, Some(v)) = (cfg.variant.adapts_recurrent_bias(), &p.context_bias) {
            let vc = v.matvec(&c)?;
            axpy(1.0, &vc, &mut bias);
        }
        let mut offset = vec![0.0; cfg.vocab_size];
        let mut class_weights = Vec::new();
        match cfg.softmax_bias {
            BiasMode::Off => {}
            BiasMode::Projected => {
                if let Some(q) = &p.softmax_projection {
                    q.matvec_into(&c, &mut offset)?;
                }
            }
            BiasMode::OneHot => {
                if let Some(table) = &p.class_bias {
                    class_weights = self.schema.class_weights(value)?;
                    for &(cls, w) in &class_weights {
                        axpy(w, table.row(cls), &mut offset);
                    }
                }
            }
        }
        Ok((
            AdaptedCell {
                weight,
                bias,
                offset,
                context: c,
            },
            AdaptTrace {
                encoder,
                class_weights,
            },
        ))
    }

    pub fn initial_state(&self) -> CellState {
        CellState::zeros(self.config.hidden_dim)
    }

    pub(crate) fn check_token(&self, id: usize) -> Result<()> {
        if id >= self.config.vocab_size {
            return Err(Error::Vocab {
                id,
                size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Input embedding row for `id`.
    pub fn word_embedding(&self, id: usize) -> Result<&[f64]> {
        self.check_token(id)?;
        Ok(self.params.embedding.row(id))
    }

    /// `L·h`, or `h` itself when e = d.
    pub(crate) fn project(&self, h: &[f64]) -> Result<Vec<f64>> {
        match &self.params.projection {
            Some(l) => l.matvec(h),
            None => Ok(h.to_vec()),
        }
    }

    /// `E·L·h + b_out + offset`; no softmax.
    pub fn output_logits(&self, cell: &AdaptedCell, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.config.hidden_dim || cell.offset.len() != self.config.vocab_size {
            return Err(Error::dim(
                "output_logits",
                &[self.config.hidden_dim, self.config.vocab_size],
                &[h.len(), cell.offset.len()],
            ));
        }
        let proj = self.project(h)?;
        let mut logits = self.params.embedding.matvec(&proj)?;
        for ((l, b), o) in logits
            .iter_mut()
            .zip(self.params.output_bias.data())
            .zip(&cell.offset)
        {
            *l += b + o;
        }
        Ok(logits)
    }

    /// Feed `token` and return the new state with the logits for the next one.
    pub fn step(
        &self,
        cell: &AdaptedCell,
        token: usize,
        state: &CellState,
    ) -> Result<(CellState, Vec<f64>)> {
        let w = self.word_embedding(token)?;
        let next = cell_step(cell, w, state)?;
        let logits = self.output_logits(cell, &next.h)?;
        Ok((next, logits))
    }

    /// Per-position log-probabilities of `tokens[1..]` under a cached cell.
    pub fn token_logprobs_with_cell(&self, cell: &AdaptedCell, tokens: &[usize]) -> Result<Vec<f64>> {
        if tokens.len() < 2 {
            return Err(Error::Argument(
                "sequence needs at least one predicted token".into(),
            ));
        }
        for &t in tokens {
            self.check_token(t)?;
        }
        let mut state = self.initial_state();
        let mut out = Vec::with_capacity(tokens.len() - 1);
        for (t, pair) in tokens.windows(2).enumerate() {
            let trace = cell.step_traced(self.params.embedding.row(pair[0]), &state, None, Some(t))?;
            state = CellState {
                h: trace.h,
                m: trace.m,
            };
            let logits = self.output_logits(cell, &state.h)?;
            out.push(log_softmax(&logits)[pair[1]]);
        }
        Ok(out)
    }

    /// Per-position log-probabilities of `tokens[1..]` given a context.
    pub fn token_logprobs(&self, value: &ContextValue, tokens: &[usize]) -> Result<Vec<f64>> {
        let cell = self.adapt(value)?;
        self.token_logprobs_with_cell(&cell, tokens)
    }

    /// `log p(tokens[1..] | tokens[0], context)`; `tokens` is framed.
    pub fn sequence_logprob(&self, value: &ContextValue, tokens: &[usize]) -> Result<f64> {
        Ok(self.token_logprobs(value, tokens)?.iter().sum())
    }

    /// Same as [`sequence_logprob`](Self::sequence_logprob) but rebuilds the
    /// adapted weights before every step instead of caching them.
    pub fn sequence_logprob_uncached(&self, value: &ContextValue, tokens: &[usize]) -> Result<f64> {
        if tokens.len() < 2 {
            return Err(Error::Argument(
                "sequence needs at least one predicted token".into(),
            ));
        }
        let mut state = self.initial_state();
        let mut total = 0.0;
        for pair in tokens.windows(2) {
            self.check_token(pair[1])?;
            let cell = self.adapt(value)?;
            let (next, logits) = self.step(&cell, pair[0], &state)?;
            state = next;
            total += log_softmax(&logits)[pair[1]];
        }
        Ok(total)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }
}
