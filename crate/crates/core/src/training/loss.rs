//! Cross-entropy objectives and their exact reverse-mode gradients.
//!
//! One sequence is processed at a time: the forward pass caches every step of
//! the cell, the output-layer gradient is applied as soon as each step's
//! logits are known, and backpropagation through time then runs over the whole
//! sequence. Gradients with respect to the adapted weights `W'`, `b'` and the
//! output offset are finally pushed back through the adaptation into `W`,
//! `Z_L`, `Z_R`, `V`, `Q` (or the class table) and the context encoder.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;

use super::dropout::recurrent_dropout_mask;
use crate::context::ContextValue;
use crate::data::{Batch, Document};
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, softmax};
use crate::model::{AdaptTrace, AdaptedCell, BiasMode, CellState, Model, ModelParams, StepTrace};
use crate::rng;
use crate::tensor::{axpy, matmul, mode1_product, mode3_product, Tensor};

/// A framed token sequence with its context.
#[derive(Clone, Copy, Debug)]
pub struct Sequence<'a> {
    pub tokens: &'a [usize],
    pub context: &'a ContextValue,
}

impl<'a> Sequence<'a> {
    pub fn new(tokens: &'a [usize], context: &'a ContextValue) -> Self {
        Sequence { tokens, context }
    }
}

/// Strip padding from a batch built over `docs`.
pub fn batch_sequences<'a>(batch: &Batch, docs: &'a [Document]) -> Vec<Sequence<'a>> {
    batch
        .indices
        .iter()
        .enumerate()
        .map(|(b, &i)| {
            let len = batch.length(b);
            Sequence::new(&docs[i].tokens[..len], &docs[i].context)
        })
        .collect()
}

/// Randomness and regularization settings for one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossOptions {
    /// Recurrent-dropout keep probability; 1 disables dropout.
    pub keep_prob: f64,
    /// Draw a fresh dropout mask at every time step instead of once per sequence.
    pub per_step_dropout: bool,
    pub seed: u64,
    /// Optimizer step, used to derive per-step random streams.
    pub step: u64,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            keep_prob: 1.0,
            per_step_dropout: false,
            seed: 0,
            step: 0,
        }
    }
}

/// Source of negative candidates for the sampled softmax.
#[derive(Clone, Debug)]
pub enum NegativeSampler {
    /// Draw `samples` ids with replacement from the training unigram
    /// distribution; each sampled negative is corrected by `log(samples·q)`.
    Unigram {
        probs: Vec<f64>,
        dist: WeightedIndex<f64>,
        samples: usize,
    },
    /// Every non-target id exactly once with no correction. The result is the
    /// full softmax; used to check the sampled path.
    Exhaustive,
}

impl NegativeSampler {
    /// Build a unigram proposal from target-token counts.
    pub fn unigram(counts: &[u64], samples: usize) -> Result<Self> {
        if samples == 0 {
            return Err(Error::Config("sampled softmax needs at least one sample".into()));
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::Config("unigram proposal has zero mass".into()));
        }
        let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let dist = WeightedIndex::new(&probs)
            .map_err(|e| Error::Config(format!("unigram proposal: {e}")))?;
        Ok(NegativeSampler::Unigram {
            probs,
            dist,
            samples,
        })
    }

    pub fn probabilities(&self) -> Option<&[f64]> {
        match self {
            NegativeSampler::Unigram { probs, .. } => Some(probs),
            NegativeSampler::Exhaustive => None,
        }
    }

    /// `(id, log expected count)` for the target followed by the negatives.
    fn candidates<R: Rng>(&self, target: usize, vocab: usize, rng: &mut R) -> Vec<(usize, f64)> {
        match self {
            NegativeSampler::Exhaustive => std::iter::once((target, 0.0))
                .chain((0..vocab).filter(|&i| i != target).map(|i| (i, 0.0)))
                .collect(),
            NegativeSampler::Unigram {
                probs,
                dist,
                samples,
            } => {
                let m = *samples as f64;
                // the target is always present: inclusion probability 1, no correction
                let mut out = Vec::with_capacity(samples + 1);
                out.push((target, 0.0));
                for _ in 0..*samples {
                    let id = dist.sample(rng);
                    // accidental hits on the target are dropped
                    if id != target {
                        out.push((id, (m * probs[id]).ln()));
                    }
                }
                out
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Objective<'a> {
    Full,
    Sampled(&'a NegativeSampler),
}

/// Gradient buffers for the per-context adapted arrays of one sequence.
struct AdaptedGrads {
    weight: Tensor,
    bias: Vec<f64>,
    offset: Vec<f64>,
}

struct SequenceResult {
    loss: f64,
    targets: usize,
    grads: Option<ModelParams>,
}

fn sequence_pass(
    model: &Model,
    seq: &Sequence<'_>,
    objective: Objective<'_>,
    opts: &LossOptions,
    index: u64,
    want_grads: bool,
) -> Result<SequenceResult> {
    let cfg = &model.config;
    let p = &model.params;
    let tokens = seq.tokens;
    if tokens.len() < 2 {
        return Err(Error::Argument(format!(
            "batch item {index} has no predicted tokens"
        )));
    }
    for &t in tokens {
        model.check_token(t)?;
    }
    let (e, d, v) = (cfg.word_dim, cfg.hidden_dim, cfg.vocab_size);
    let (cell, adapt_trace) = model.adapt_traced(seq.context)?;

    let stream_index = (opts.step << 24) | index;
    let dropout = opts.keep_prob < 1.0;
    let mut drop_rng = rng::substream(opts.seed, rng::DROPOUT, stream_index);
    let mut sample_rng = rng::substream(opts.seed, rng::SAMPLING, stream_index);
    let seq_mask = dropout.then(|| recurrent_dropout_mask(&mut drop_rng, opts.keep_prob, d));

    let mut grads = want_grads.then(|| model.params.zeros_like());
    let mut ag = want_grads.then(|| AdaptedGrads {
        weight: Tensor::zeros(cell.weight.shape()),
        bias: vec![0.0; 3 * d],
        offset: vec![0.0; v],
    });

    let steps = tokens.len() - 1;
    let mut traces: Vec<StepTrace> = Vec::with_capacity(steps);
    let mut masks: Vec<Option<Vec<f64>>> = Vec::with_capacity(steps);
    let mut dh_out: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut state = CellState::zeros(d);
    let mut loss = 0.0;

    for t in 0..steps {
        let (input, target) = (tokens[t], tokens[t + 1]);
        let mask = match (&seq_mask, opts.per_step_dropout) {
            (Some(_), true) => Some(recurrent_dropout_mask(&mut drop_rng, opts.keep_prob, d)),
            (m, _) => m.clone(),
        };
        let trace = cell.step_traced(p.embedding.row(input), &state, mask.as_deref(), Some(t))?;
        state = CellState {
            h: trace.h.clone(),
            m: trace.m.clone(),
        };
        let proj = model.project(&trace.h)?;

        // sparse list of (id, dloss/dlogit)
        let (step_loss, dlogits): (f64, Vec<(usize, f64)>) = match objective {
            Objective::Full => {
                let logits = model.output_logits(&cell, &trace.h)?;
                let lse = log_sum_exp(&logits);
                let l = lse - logits[target];
                let dl = if want_grads {
                    let mut probs = softmax(&logits);
                    probs[target] -= 1.0;
                    probs.into_iter().enumerate().collect()
                } else {
                    Vec::new()
                };
                (l, dl)
            }
            Objective::Sampled(sampler) => {
                let cands = sampler.candidates(target, v, &mut sample_rng);
                let logits: Vec<f64> = cands
                    .iter()
                    .map(|&(id, log_q)| {
                        crate::tensor::dot(p.embedding.row(id), &proj)
                            + p.output_bias.data()[id]
                            + cell.offset[id]
                            - log_q
                    })
                    .collect();
                let l = log_sum_exp(&logits) - logits[0];
                let dl = if want_grads {
                    let mut probs = softmax(&logits);
                    probs[0] -= 1.0;
                    cands.iter().map(|c| c.0).zip(probs).collect()
                } else {
                    Vec::new()
                };
                (l, dl)
            }
        };
        if !step_loss.is_finite() {
            return Err(Error::non_finite(format!("loss of batch item {index}"), Some(t)));
        }
        loss += step_loss;

        if let (Some(g), Some(ag)) = (grads.as_mut(), ag.as_mut()) {
            let mut dproj = vec![0.0; proj.len()];
            for &(id, dl) in &dlogits {
                if dl == 0.0 {
                    continue;
                }
                axpy(dl, &proj, g.embedding.row_mut(id));
                axpy(dl, p.embedding.row(id), &mut dproj);
                g.output_bias.data_mut()[id] += dl;
                ag.offset[id] += dl;
            }
            let dh = match (&p.projection, g.projection.as_mut()) {
                (Some(l), Some(gl)) => {
                    gl.add_outer(1.0, &dproj, &trace.h)?;
                    let mut dh = vec![0.0; d];
                    l.matvec_t_acc(&dproj, &mut dh)?;
                    dh
                }
                _ => dproj,
            };
            dh_out.push(dh);
            traces.push(trace);
            masks.push(mask);
        }
    }

    let (Some(mut g), Some(mut ag)) = (grads, ag) else {
        return Ok(SequenceResult {
            loss,
            targets: steps,
            grads: None,
        });
    };

    // backpropagation through time
    let mut dh_next = vec![0.0; d];
    let mut dm_next = vec![0.0; d];
    let mut dz = vec![0.0; 3 * d];
    let mut dx = vec![0.0; e + d];
    for t in (0..steps).rev() {
        let tr = &traces[t];
        let mask = masks[t].as_deref();
        for j in 0..d {
            let dh = dh_out[t][j] + dh_next[j];
            let og = tr.out_gate[j];
            let tm = tr.tanh_m[j];
            let dm = dm_next[j] + dh * og * (1.0 - tm * tm);
            let f = tr.forget[j];
            let mk = mask.map_or(1.0, |m| m[j]);
            let g_in = tr.cand[j] * mk;
            let df = dm * (tr.m_prev[j] - g_in);
            let dcand = dm * (1.0 - f) * mk;
            dz[j] = dcand * (1.0 - tr.cand[j] * tr.cand[j]);
            dz[d + j] = df * f * (1.0 - f);
            dz[2 * d + j] = dh * tm * og * (1.0 - og);
            dm_next[j] = dm * f;
        }
        ag.weight.add_outer(1.0, &dz, &tr.x)?;
        axpy(1.0, &dz, &mut ag.bias);
        dx.iter_mut().for_each(|x| *x = 0.0);
        cell.weight.matvec_t_acc(&dz, &mut dx)?;
        axpy(1.0, &dx[..e], g.embedding.row_mut(tokens[t]));
        dh_next.copy_from_slice(&dx[e..]);
    }

    backprop_adaptation(model, &cell, &adapt_trace, &ag, &mut g)?;
    Ok(SequenceResult {
        loss,
        targets: steps,
        grads: Some(g),
    })
}

/// Push gradients of `W'`, `b'` and the output offset into the shared
/// parameters, the adaptation arrays and the context encoder.
fn backprop_adaptation(
    model: &Model,
    cell: &AdaptedCell,
    trace: &AdaptTrace,
    ag: &AdaptedGrads,
    g: &mut ModelParams,
) -> Result<()> {
    let p = &model.params;
    let c = &cell.context;
    g.recurrent.add_assign(&ag.weight)?;
    axpy(1.0, &ag.bias, g.recurrent_bias.data_mut());
    let mut dc = vec![0.0; c.len()];

    if let (Some(vb), Some(gv)) = (&p.context_bias, g.context_bias.as_mut()) {
        gv.add_outer(1.0, &ag.bias, c)?;
        vb.matvec_t_acc(&ag.bias, &mut dc)?;
    }

    if let (Some(zl), Some(zr)) = (&p.left_basis, &p.right_basis) {
        let left = mode1_product(c, zl)?; // (e+d)×r
        let right = mode3_product(zr, c)?; // r×3d
        let dw_t = ag.weight.transpose()?; // (e+d)×3d
        let d_left = matmul(&dw_t, &right.transpose()?)?; // (e+d)×r
        let d_right = matmul(&left.transpose()?, &dw_t)?; // r×3d
        let (k, pe, r) = (zl.shape()[0], zl.shape()[1], zl.shape()[2]);
        let gl = g.left_basis.as_mut().expect("layout mirrors params");
        for kk in 0..k {
            let block = &mut gl.data_mut()[kk * pe * r..(kk + 1) * pe * r];
            axpy(c[kk], d_left.data(), block);
            dc[kk] += crate::tensor::dot(&zl.data()[kk * pe * r..(kk + 1) * pe * r], d_left.data());
        }
        let gr = g.right_basis.as_mut().expect("layout mirrors params");
        for (idx, dr) in d_right.data().iter().enumerate() {
            let base = idx * k;
            for kk in 0..k {
                gr.data_mut()[base + kk] += dr * c[kk];
                dc[kk] += dr * zr.data()[base + kk];
            }
        }
    }

    match model.config.softmax_bias {
        BiasMode::Off => {}
        BiasMode::Projected => {
            if let (Some(q), Some(gq)) = (&p.softmax_projection, g.softmax_projection.as_mut()) {
                gq.add_outer(1.0, &ag.offset, c)?;
                q.matvec_t_acc(&ag.offset, &mut dc)?;
            }
        }
        BiasMode::OneHot => {
            if let Some(gt) = g.class_bias.as_mut() {
                for &(cls, w) in &trace.class_weights {
                    axpy(w, &ag.offset, gt.row_mut(cls));
                }
            }
        }
    }

    if let (Some(enc), Some(ge), Some(et)) = (&p.encoder, g.encoder.as_mut(), &trace.encoder) {
        ge.output_weight.add_outer(1.0, &dc, &et.hidden)?;
        axpy(1.0, &dc, ge.output_bias.data_mut());
        let mut dhid = vec![0.0; et.hidden.len()];
        enc.output_weight.matvec_t_acc(&dc, &mut dhid)?;
        for (dh, pre) in dhid.iter_mut().zip(&et.pre_activation) {
            if *pre <= 0.0 {
                *dh = 0.0;
            }
        }
        ge.hidden_weight.add_outer(1.0, &dhid, &et.raw)?;
        axpy(1.0, &dhid, ge.hidden_bias.data_mut());
    }
    Ok(())
}

fn batch_pass(
    model: &Model,
    batch: &[Sequence<'_>],
    objective: Objective<'_>,
    opts: &LossOptions,
    want_grads: bool,
) -> Result<(f64, Option<ModelParams>)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let results: Vec<Result<SequenceResult>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| sequence_pass(model, s, objective, opts, i as u64, want_grads))
        .collect();
    // reduce in batch order so the result does not depend on scheduling
    let mut loss = 0.0;
    let mut targets = 0usize;
    let mut grads: Option<ModelParams> = None;
    for (i, r) in results.into_iter().enumerate() {
        let r = r.map_err(|e| match e {
            Error::NonFinite { what, step } if !what.contains("batch item") => Error::NonFinite {
                what: format!("{what} of batch item {i}"),
                step,
            },
            other => other,
        })?;
        loss += r.loss;
        targets += r.targets;
        if let Some(g) = r.grads {
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => acc.axpy(1.0, &g)?,
            }
        }
    }
    let scale = 1.0 / targets as f64;
    if let Some(g) = grads.as_mut() {
        g.scale_in_place(scale);
    }
    Ok((loss * scale, grads))
}

/// Mean per-token negative log-likelihood over the batch and its gradient with
/// respect to every parameter array.
pub fn cross_entropy_loss(
    model: &Model,
    batch: &[Sequence<'_>],
    opts: &LossOptions,
) -> Result<(f64, ModelParams)> {
    let (l, g) = batch_pass(model, batch, Objective::Full, opts, true)?;
    Ok((l, g.expect("gradients requested")))
}

/// Sampled-softmax surrogate of [`cross_entropy_loss`]: at every step the
/// softmax runs over the target plus sampled negatives, each negative's logit
/// lowered by the log of its expected sample count.
pub fn sampled_softmax_loss(
    model: &Model,
    batch: &[Sequence<'_>],
    sampler: &NegativeSampler,
    opts: &LossOptions,
) -> Result<(f64, ModelParams)> {
    let (l, g) = batch_pass(model, batch, Objective::Sampled(sampler), opts, true)?;
    Ok((l, g.expect("gradients requested")))
}

/// Loss only, no gradients. Consumes randomness exactly like the gradient
/// path, so the two agree for the same options.
pub fn batch_loss(
    model: &Model,
    batch: &[Sequence<'_>],
    sampler: Option<&NegativeSampler>,
    opts: &LossOptions,
) -> Result<f64> {
    let objective = match sampler {
        Some(s) => Objective::Sampled(s),
        None => Objective::Full,
    };
    Ok(batch_pass(model, batch, objective, opts, false)?.0)
}
