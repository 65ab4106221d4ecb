use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::adam::{adam_step, OptimizerState};
use super::loss::{batch_sequences, cross_entropy_loss, sampled_softmax_loss, LossOptions, NegativeSampler};
use super::TrainConfig;
use crate::data::{make_batches, Corpus};
use crate::error::{Error, Result};
use crate::eval::perplexity;
use crate::model::{save_checkpoint, Model, ModelConfig, Precision};

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    /// Mean training loss (nats/token) over the batches since the last row.
    pub train_loss: f64,
    /// NaN when there is no dev split.
    pub dev_ppl: f64,
}

impl MetricsRow {
    /// `step<TAB>train_loss<TAB>dev_ppl`
    pub fn to_line(&self) -> String {
        format!("{}\t{:.6}\t{:.6}", self.step, self.train_loss, self.dev_ppl)
    }
}

pub trait ProgressSink {
    fn record(&mut self, row: &MetricsRow) -> Result<()>;
}

/// Discards progress.
pub struct NullSink;

impl ProgressSink for NullSink {
    fn record(&mut self, _row: &MetricsRow) -> Result<()> {
        Ok(())
    }
}

/// Appends metrics lines to a file.
pub struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsLog {
    /// Create (truncating) the log at `path`.
    pub fn create(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricsLog {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }
}

impl ProgressSink for MetricsLog {
    fn record(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_line())
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model with the lowest dev perplexity (the final model without a dev split).
    pub best: Model,
    /// Model after the last update.
    pub last: Model,
    pub best_step: usize,
    pub best_dev_ppl: f64,
    pub metrics: Vec<MetricsRow>,
}

/// Train a fresh model on `corpus`.
///
/// The vocabulary size in `model_cfg` is taken from the corpus. When a
/// checkpoint path is given the initial model is written first and then
/// replaced every time dev perplexity improves, so a diverging run leaves the
/// last good checkpoint on disk.
pub fn train(
    corpus: &Corpus,
    model_cfg: &ModelConfig,
    tc: &TrainConfig,
    checkpoint: Option<&Path>,
    sink: &mut dyn ProgressSink,
) -> Result<TrainOutcome> {
    let mut cfg = model_cfg.clone();
    cfg.vocab_size = corpus.vocab.len();
    tc.validate(cfg.vocab_size)?;
    if corpus.train.is_empty() {
        return Err(Error::Argument("training split is empty".into()));
    }
    let mut model = Model::init(cfg, corpus.schema.clone(), corpus.vocab.clone(), tc.seed)?;
    if tc.precision == Precision::F32 {
        model.params.round_to_f32();
    }
    let sampler = if tc.sampled_softmax > 0 {
        Some(NegativeSampler::unigram(&corpus.unigram, tc.sampled_softmax)?)
    } else {
        None
    };
    if let Some(path) = checkpoint {
        save_checkpoint(&model, path, tc.precision)?;
    }

    let mut opt = OptimizerState::new(&model.params);
    let mut best = model.clone();
    let mut best_step = 0;
    let mut best_ppl = f64::INFINITY;
    let mut metrics = Vec::new();

    let mut epoch = 0u64;
    let mut batches = make_batches(&corpus.train, tc.batch_size, tc.seed, epoch).into_iter();
    let (mut interval_loss, mut interval_batches) = (0.0, 0usize);

    for step in 1..=tc.max_steps {
        let batch = match batches.next() {
            Some(b) => b,
            None => {
                epoch += 1;
                batches = make_batches(&corpus.train, tc.batch_size, tc.seed, epoch).into_iter();
                batches.next().expect("non-empty training split")
            }
        };
        let seqs = batch_sequences(&batch, &corpus.train);
        let opts = LossOptions {
            keep_prob: tc.keep_prob,
            per_step_dropout: tc.dropout_per_step,
            seed: tc.seed,
            step: step as u64,
        };
        let (loss, grads) = match &sampler {
            Some(s) => sampled_softmax_loss(&model, &seqs, s, &opts)?,
            None => cross_entropy_loss(&model, &seqs, &opts)?,
        };
        adam_step(&mut model.params, &grads, &mut opt, tc)?;
        if tc.precision == Precision::F32 {
            model.params.round_to_f32();
        }
        interval_loss += loss;
        interval_batches += 1;

        let at_interval = tc.eval_interval > 0 && step % tc.eval_interval == 0;
        if at_interval || step == tc.max_steps {
            let dev_ppl = if corpus.dev.is_empty() {
                f64::NAN
            } else {
                perplexity(&model, &corpus.dev)?.perplexity
            };
            let row = MetricsRow {
                step,
                train_loss: interval_loss / interval_batches as f64,
                dev_ppl,
            };
            sink.record(&row)?;
            metrics.push(row);
            interval_loss = 0.0;
            interval_batches = 0;
            if !corpus.dev.is_empty() && dev_ppl < best_ppl {
                best_ppl = dev_ppl;
                best = model.clone();
                best_step = step;
                if let Some(path) = checkpoint {
                    save_checkpoint(&best, path, tc.precision)?;
                }
            }
        }
    }

    if corpus.dev.is_empty() {
        best = model.clone();
        best_step = tc.max_steps;
        best_ppl = f64::NAN;
        if let Some(path) = checkpoint {
            save_checkpoint(&best, path, tc.precision)?;
        }
    } else if best_ppl.is_infinite() {
        // no evaluation happened (max_steps = 0)
        best_ppl = perplexity(&model, &corpus.dev)?.perplexity;
    }

    Ok(TrainOutcome {
        best,
        last: model,
        best_step,
        best_dev_ppl: best_ppl,
        metrics,
    })
}
