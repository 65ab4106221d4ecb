mod common;

use common::*;
use factorcell::data::{Corpus, DataConfig, BOS, EOS};
use factorcell::context::{ContextEntry, DeclaredKind};
use factorcell::model::load_checkpoint;
use factorcell::synthetic;
use factorcell::training::{
    adam_step, batch_loss, clip_global_norm, cross_entropy_loss, sampled_softmax_loss, train,
    LossOptions, NegativeSampler, NullSink, OptimizerState, Sequence, TrainConfig,
};
use factorcell::{BiasMode, ContextValue, Error, Model, ModelConfig, Unit, Variant};
use proptest::prelude::*;

const DIMS: (usize, usize, usize, usize) = (4, 5, 3, 2);

#[test]
fn uniform_model_costs_log_v() {
    let voc = vocab(0);
    assert_eq!(voc.len(), 4);
    let cfg = config(Variant::Unadapted, BiasMode::Off, DIMS, 4);
    let mut m = Model::init(cfg, schema(), voc, 1).unwrap();
    m.params.embedding.fill(0.0);
    let ctx = ContextValue::empty();
    let t = [BOS, 1, 1, EOS];
    let (loss, _) = cross_entropy_loss(&m, &[Sequence::new(&t, &ctx)], &LossOptions::default()).unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-15);
}

#[test]
fn identical_sequences_average_to_one() {
    let m = model(Variant::FactorCell, BiasMode::Projected, DIMS, 2);
    let mut r = rng(3);
    let ctx = context(&mut r);
    let t = tokens(&mut r, 6, m.vocab_size());
    let one = [Sequence::new(&t, &ctx)];
    let three = [one[0]; 3];
    let opts = LossOptions::default();
    let (l1, g1) = cross_entropy_loss(&m, &one, &opts).unwrap();
    let (l3, g3) = cross_entropy_loss(&m, &three, &opts).unwrap();
    assert!((l1 - l3).abs() < 1e-14);
    for ((_, a), (_, b)) in g1.arrays().into_iter().zip(g3.arrays()) {
        assert!(max_abs_diff(a.data(), b.data()) < 1e-14);
    }
}

#[test]
fn exhaustive_sampling_is_the_full_softmax() {
    for (v, mode) in all_configurations() {
        let m = model(v, mode, DIMS, 4);
        let mut r = rng(5);
        let (c0, c1) = (context(&mut r), context(&mut r));
        let (t0, t1) = (tokens(&mut r, 5, m.vocab_size()), tokens(&mut r, 3, m.vocab_size()));
        let batch = [Sequence::new(&t0, &c0), Sequence::new(&t1, &c1)];
        let opts = LossOptions::default();
        let (lf, gf) = cross_entropy_loss(&m, &batch, &opts).unwrap();
        let (ls, gs) = sampled_softmax_loss(&m, &batch, &NegativeSampler::Exhaustive, &opts).unwrap();
        assert!((lf - ls).abs() < 1e-10);
        for ((n, a), (_, b)) in gf.arrays().into_iter().zip(gs.arrays()) {
            assert!(max_abs_diff(a.data(), b.data()) < 1e-10, "{n}");
        }
    }
}

#[test]
fn sampled_loss_tracks_full_loss() {
    let m = model(Variant::FactorCell, BiasMode::Projected, DIMS, 6);
    assert_eq!(m.vocab_size(), 10);
    let counts = [0, 3, 0, 5, 2, 7, 1, 4, 1, 2];
    let sampler = NegativeSampler::unigram(&counts, 5).unwrap();
    let q = sampler.probabilities().unwrap();
    assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let mut r = rng(7);
    let (c0, c1) = (context(&mut r), context(&mut r));
    let (t0, t1) = (tokens(&mut r, 5, 10), tokens(&mut r, 4, 10));
    let batch = [Sequence::new(&t0, &c0), Sequence::new(&t1, &c1)];
    let full = batch_loss(&m, &batch, None, &LossOptions::default()).unwrap();
    let samples: Vec<f64> = (0..1000)
        .map(|s| {
            let opts = LossOptions { seed: 42, step: s, ..LossOptions::default() };
            batch_loss(&m, &batch, Some(&sampler), &opts).unwrap()
        })
        .collect();
    assert!(samples.iter().all(|l| l.is_finite()));
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(sd > 0.0);
    assert!((mean - full).abs() < 3.0 * sd, "mean {mean} full {full} sd {sd}");

    // the gradient path consumes randomness like the loss-only path
    let opts = LossOptions { seed: 42, step: 17, ..LossOptions::default() };
    let (l, _) = sampled_softmax_loss(&m, &batch, &sampler, &opts).unwrap();
    assert_eq!(l, samples[17]);
}

#[test]
fn degenerate_proposal_is_a_config_error() {
    assert!(matches!(NegativeSampler::unigram(&[0, 0, 0], 2), Err(Error::Config(_))));
}

#[test]
fn dropout_is_training_only() {
    let m = model(Variant::FactorCell, BiasMode::Projected, DIMS, 8);
    let mut r = rng(9);
    let ctx = context(&mut r);
    let t = tokens(&mut r, 6, m.vocab_size());
    let b = [Sequence::new(&t, &ctx)];
    let clean = batch_loss(&m, &b, None, &LossOptions::default()).unwrap();
    let drop = |seed| {
        let opts = LossOptions { keep_prob: 0.5, seed, ..LossOptions::default() };
        batch_loss(&m, &b, None, &opts).unwrap()
    };
    assert_eq!(drop(1), drop(1));
    assert_ne!(drop(1), drop(2));
    assert_ne!(drop(1), clean);
    let lp = m.sequence_logprob(&ctx, &t).unwrap();
    assert!((clean - (-lp / (t.len() - 1) as f64)).abs() < 1e-12);
}

#[test]
fn non_finite_loss_names_the_batch_item() {
    let m = model(Variant::FactorCell, BiasMode::Off, DIMS, 10);
    let mut r = rng(11);
    let ctx = context(&mut r);
    // an absurd numeric context overflows the adapted weights of item 1 only
    let wild = ContextValue::new(vec![ContextEntry::Category(1), ContextEntry::Numeric(1e200)]);
    let t = tokens(&mut r, 4, m.vocab_size());
    let err = cross_entropy_loss(&m, &[Sequence::new(&t, &ctx), Sequence::new(&t, &wild)], &LossOptions::default())
        .unwrap_err();
    assert!(err.is_numeric(), "{err}");
    assert!(err.to_string().contains("batch item 1"), "{err}");
}

#[test]
fn adam_aborts_on_non_finite_gradients() {
    let mut m = model(Variant::ConcatCell, BiasMode::Projected, DIMS, 12);
    let mut opt = OptimizerState::new(&m.params);
    let mut g = m.params.zeros_like();
    g.recurrent.data_mut()[3] = f64::NAN;
    let before = m.params.clone();
    let err = adam_step(&mut m.params, &g, &mut opt, &TrainConfig::default()).unwrap_err();
    assert!(err.is_numeric());
    assert_eq!(m.params, before);
    assert_eq!(opt.step, 0);
    assert_eq!(opt.first, m.params.zeros_like());
}

#[test]
fn tiny_step_reduces_batch_loss() {
    let m = model(Variant::FactorCell, BiasMode::Projected, DIMS, 13);
    let mut r = rng(14);
    let (c0, c1) = (context(&mut r), context(&mut r));
    let (t0, t1) = (tokens(&mut r, 5, 10), tokens(&mut r, 5, 10));
    let batch = [Sequence::new(&t0, &c0), Sequence::new(&t1, &c1)];
    let opts = LossOptions::default();
    let (before, grads) = cross_entropy_loss(&m, &batch, &opts).unwrap();
    for lr in [1e-4, 1e-5] {
        let mut stepped = m.clone();
        let tc = TrainConfig { learning_rate: lr, ..TrainConfig::default() };
        adam_step(&mut stepped.params, &grads, &mut OptimizerState::new(&m.params), &tc).unwrap();
        let after = batch_loss(&stepped, &batch, None, &opts).unwrap();
        assert!(after < before, "lr {lr}: {after} >= {before}");
    }
}

proptest! {
    #[test]
    fn clipped_norm_respects_the_limit(seed in any::<u64>(), scale in 0.01f64..100.0, max in 0.1f64..10.0) {
        let m = model(Variant::FactorCell, BiasMode::OneHot, (3, 4, 2, 2), seed);
        let mut g = m.params.clone();
        g.scale_in_place(scale);
        let pre = g.global_norm();
        let reported = clip_global_norm(&mut g, max);
        prop_assert_eq!(reported, pre);
        prop_assert!(g.global_norm() <= max + 1e-9);
        if pre <= max {
            prop_assert_eq!(g.global_norm(), pre);
        }
    }
}

fn repeated_corpus() -> Corpus {
    let recs = synthetic::repeated_sentence("the cat sat on the mat", 16);
    let dc = DataConfig {
        context: vec![("class".into(), DeclaredKind::Categorical)],
        ..DataConfig::default()
    };
    Corpus::from_records(&recs, &recs[..2], &[], &dc).unwrap()
}

fn small_config(variant: Variant, mode: BiasMode) -> ModelConfig {
    ModelConfig {
        variant,
        softmax_bias: mode,
        word_dim: 8,
        hidden_dim: 8,
        context_dim: 2,
        rank: if variant == Variant::FactorCell { 2 } else { 0 },
        unit: Unit::Word,
        ..ModelConfig::default()
    }
}

#[test]
fn zero_steps_returns_the_initial_model() {
    let corpus = repeated_corpus();
    let cfg = small_config(Variant::FactorCell, BiasMode::Projected);
    let tc = TrainConfig { max_steps: 0, ..TrainConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let out = train(&corpus, &cfg, &tc, Some(&path), &mut NullSink).unwrap();
    let fresh = Model::init(
        ModelConfig { vocab_size: corpus.vocab.len(), ..cfg },
        corpus.schema.clone(),
        corpus.vocab.clone(),
        tc.seed,
    )
    .unwrap();
    assert_eq!(out.best, fresh);
    assert_eq!(out.last, fresh);
    assert!(out.metrics.is_empty());
    assert_eq!(load_checkpoint(&path).unwrap().0, fresh);
}

#[test]
fn memorizes_a_repeated_sentence() {
    let corpus = repeated_corpus();
    let cfg = small_config(Variant::FactorCell, BiasMode::Projected);
    let tc = TrainConfig {
        max_steps: 500,
        batch_size: 4,
        learning_rate: 0.01,
        eval_interval: 100,
        ..TrainConfig::default()
    };
    let out = train(&corpus, &cfg, &tc, None, &mut NullSink).unwrap();
    let last = out.metrics.last().unwrap();
    assert_eq!(last.step, 500);
    assert!(last.train_loss < 0.1, "train loss {}", last.train_loss);
    let ppl = factorcell::perplexity(&out.last, &corpus.train).unwrap().perplexity;
    assert!(ppl < 1.1, "ppl {ppl}");
}

#[test]
fn training_is_reproducible_across_thread_counts() {
    let corpus = repeated_corpus();
    let cfg = small_config(Variant::FactorCell, BiasMode::Projected);
    let tc = TrainConfig {
        max_steps: 30,
        batch_size: 3,
        keep_prob: 0.8,
        sampled_softmax: 4,
        eval_interval: 10,
        ..TrainConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train(&corpus, &cfg, &tc, None, &mut NullSink).unwrap())
    };
    let (a, b, c) = (run(1), run(1), run(4));
    assert_eq!(a.last, b.last);
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.last, c.last);
    assert_eq!(a.metrics, c.metrics);
}
