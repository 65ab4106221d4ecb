//! Context-adapted recurrent language models.
//!
//! Four variants share one coupled-gate LSTM and a tied-embedding softmax:
//!
//! * `unadapted` ignores context;
//! * `softmax_bias` shifts the output bias by a context-dependent offset;
//! * `concat_cell` also adds `V c` to the recurrent bias, which is the same as
//!   feeding the context embedding `c` as an extra input;
//! * `factor_cell` additionally adds a rank-`r` matrix generated from `c` to the
//!   recurrent weights.
//!
//! Adapted weights are materialized once per context ([`Model::adapt`]), so
//! per-token inference cost matches the unadapted cell. Training uses exact
//! hand-written gradients ([`training`]), and [`eval`] provides perplexity and
//! Bayes-rule classification over contexts.

// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod context;
pub mod data;
pub mod error;
pub mod eval;
pub mod generate;
pub mod math;
pub mod model;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use config::RunConfig;
pub use context::{ContextEncoder, ContextEntry, ContextSchema, ContextValue, ContextVariable};
pub use data::{Corpus, DataConfig, Document, Unit, Vocabulary};
pub use error::{Error, Result};
pub use eval::{classify, perplexity, ClassificationReport, EvalReport, Label, LabelSet};
pub use generate::{generate, Generation};
pub use model::{
    AdaptedCell, BiasMode, CellState, Model, ModelConfig, ModelParams, Precision, Variant,
};
pub use tensor::Tensor;
pub use training::{train, TrainConfig, TrainOutcome};
