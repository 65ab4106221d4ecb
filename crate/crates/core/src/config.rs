//! Flat `key = value` run configuration.
//!
//! Every [`ModelConfig`] and [`TrainConfig`] field is a key under its field
//! name, plus the preprocessing keys `max_tokens`, `min_count`,
//! `min_category_count` and `context` (a comma-separated list of
//! `name:categorical` / `name:numeric`). `#` starts a comment. Unknown keys
//! are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::context::DeclaredKind;
use crate::data::DataConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

pub const KEYS: &[&str] = &[
    "variant",
    "vocab_size",
    "word_dim",
    "hidden_dim",
    "context_dim",
    "rank",
    "softmax_bias",
    "unit",
    "encoder_hidden",
    "one_hot_max_classes",
    "learning_rate",
    "beta1",
    "beta2",
    "adam_eps",
    "batch_size",
    "max_steps",
    "keep_prob",
    "dropout_per_step",
    "sampled_softmax",
    "clip_norm",
    "seed",
    "precision",
    "eval_interval",
    "max_tokens",
    "min_count",
    "min_category_count",
    "context",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {value:?} for {key}"))),
    }
}

fn parse_context(value: &str) -> Result<Vec<(String, DeclaredKind)>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (name, kind) = item
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("context entry {item:?} needs name:kind")))?;
            let kind = match kind.trim() {
                "categorical" | "cat" => DeclaredKind::Categorical,
                "numeric" | "num" => DeclaredKind::Numeric,
                other => return Err(Error::Config(format!("unknown context kind {other:?}"))),
            };
            Ok((name.trim().to_string(), kind))
        })
        .collect()
}

impl RunConfig {
    /// Set one key. Unit is shared by the model and the preprocessor.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t, d) = (&mut self.model, &mut self.train, &mut self.data);
        match key {
            "variant" => m.variant = value.parse()?,
            "vocab_size" => m.vocab_size = parse(key, value)?,
            "word_dim" => m.word_dim = parse(key, value)?,
            "hidden_dim" => m.hidden_dim = parse(key, value)?,
            "context_dim" => m.context_dim = parse(key, value)?,
            "rank" => m.rank = parse(key, value)?,
            "softmax_bias" => m.softmax_bias = value.parse()?,
            "unit" => {
                m.unit = value.parse()?;
                d.unit = m.unit;
            }
            "encoder_hidden" => m.encoder_hidden = parse(key, value)?,
            "one_hot_max_classes" => m.one_hot_max_classes = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "adam_eps" => t.adam_eps = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "max_steps" => t.max_steps = parse(key, value)?,
            "keep_prob" => t.keep_prob = parse(key, value)?,
            "dropout_per_step" => t.dropout_per_step = parse_bool(key, value)?,
            "sampled_softmax" => t.sampled_softmax = parse(key, value)?,
            "clip_norm" => t.clip_norm = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "precision" => t.precision = value.parse()?,
            "eval_interval" => t.eval_interval = parse(key, value)?,
            "max_tokens" => d.max_tokens = parse(key, value)?,
            "min_count" => d.min_count = parse(key, value)?,
            "min_category_count" => d.min_category_count = parse(key, value)?,
            "context" => d.context = parse_context(value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// Parse config text on top of the defaults; `origin` names the source in errors.
    pub fn parse_str(text: &str, origin: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                reason,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value".into()))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| err(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse_str(&text, path)
    }

    /// Render as config text that parses back to an equal value.
    pub fn to_text(&self) -> String {
        let (m, t, d) = (&self.model, &self.train, &self.data);
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("variant", m.variant.to_string());
        put("vocab_size", m.vocab_size.to_string());
        put("word_dim", m.word_dim.to_string());
        put("hidden_dim", m.hidden_dim.to_string());
        put("context_dim", m.context_dim.to_string());
        put("rank", m.rank.to_string());
        put("softmax_bias", m.softmax_bias.as_str().into());
        put("unit", m.unit.to_string());
        put("encoder_hidden", m.encoder_hidden.to_string());
        put("one_hot_max_classes", m.one_hot_max_classes.to_string());
        put("learning_rate", format!("{:?}", t.learning_rate));
        put("beta1", format!("{:?}", t.beta1));
        put("beta2", format!("{:?}", t.beta2));
        put("adam_eps", format!("{:?}", t.adam_eps));
        put("batch_size", t.batch_size.to_string());
        put("max_steps", t.max_steps.to_string());
        put("keep_prob", format!("{:?}", t.keep_prob));
        put("dropout_per_step", t.dropout_per_step.to_string());
        put("sampled_softmax", t.sampled_softmax.to_string());
        put("clip_norm", format!("{:?}", t.clip_norm));
        put("seed", t.seed.to_string());
        put("precision", t.precision.to_string());
        put("eval_interval", t.eval_interval.to_string());
        put("max_tokens", d.max_tokens.to_string());
        put("min_count", d.min_count.to_string());
        put("min_category_count", d.min_category_count.to_string());
        let ctx: Vec<String> = d
            .context
            .iter()
            .map(|(n, k)| {
                let k = match k {
                    DeclaredKind::Categorical => "categorical",
                    DeclaredKind::Numeric => "numeric",
                };
                format!("{n}:{k}")
            })
            .collect();
        put("context", ctx.join(", "));
        s
    }
}
