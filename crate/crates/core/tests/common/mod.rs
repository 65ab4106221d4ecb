#![allow(dead_code)]

use factorcell::context::{encode_raw, ContextEntry};
use factorcell::data::BOS;
use factorcell::{
    BiasMode, ContextSchema, ContextValue, ContextVariable, Model, ModelConfig, Unit, Variant,
    Vocabulary,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One categorical variable with three levels and one numeric variable.
pub fn schema() -> ContextSchema {
    ContextSchema::new(vec![
        ContextVariable::categorical_with_cardinality("lang", 3),
        ContextVariable::numeric("lat", 40.0, 5.0),
    ])
    .unwrap()
}

/// Reserved ids plus `extra` single-letter tokens.
pub fn vocab(extra: usize) -> Vocabulary {
    let entries = (0..extra)
        .map(|i| (((b'a' + i as u8) as char).to_string(), (extra - i) as u64))
        .collect();
    Vocabulary::from_entries(Unit::Word, entries).unwrap()
}

pub fn config(variant: Variant, mode: BiasMode, dims: (usize, usize, usize, usize), v: usize) -> ModelConfig {
    let (e, d, k, r) = dims;
    ModelConfig {
        variant,
        vocab_size: v,
        word_dim: e,
        hidden_dim: d,
        context_dim: k,
        rank: if variant == Variant::FactorCell { r } else { 0 },
        softmax_bias: mode,
        unit: Unit::Word,
        encoder_hidden: 0,
        one_hot_max_classes: 64,
    }
}

/// Every array filled with uniform(-scale, scale) noise, so no gradient is
/// trivially zero.
pub fn randomize(model: &mut Model, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for (_, t) in model.params.arrays_mut() {
        for x in t.data_mut() {
            *x = r.random_range(-scale..scale);
        }
    }
}

pub fn model(variant: Variant, mode: BiasMode, dims: (usize, usize, usize, usize), seed: u64) -> Model {
    let voc = vocab(6);
    let cfg = config(variant, mode, dims, voc.len());
    let mut m = Model::init(cfg, schema(), voc, seed).unwrap();
    randomize(&mut m, seed ^ 0x9e37, 0.5);
    m
}

pub fn context<R: Rng>(r: &mut R) -> ContextValue {
    ContextValue::new(vec![
        ContextEntry::Category(r.random_range(0..3)),
        ContextEntry::Numeric(r.random_range(30.0..50.0)),
    ])
}

/// A random context whose encoder pre-activations all stay at least `margin`
/// away from the ReLU kink, so the loss is smooth around it.
pub fn smooth_context<R: Rng>(r: &mut R, model: &Model, margin: f64) -> ContextValue {
    loop {
        let c = context(r);
        let Some(enc) = &model.params.encoder else {
            return c;
        };
        let raw = encode_raw(&model.schema, &c).unwrap();
        let trace = enc.trace(&raw).unwrap();
        if trace.pre_activation.iter().all(|z| z.abs() > margin) {
            return c;
        }
    }
}

/// `<s>` followed by `len - 1` random ids (never `<s>` or padding).
pub fn tokens<R: Rng>(r: &mut R, len: usize, vocab_size: usize) -> Vec<usize> {
    let mut t = vec![BOS];
    t.extend((1..len).map(|_| loop {
        let x = r.random_range(1..vocab_size);
        if x != BOS {
            break x;
        }
    }));
    t
}

/// The variant/bias-mode pairs the library supports.
pub fn all_configurations() -> Vec<(Variant, BiasMode)> {
    vec![
        (Variant::Unadapted, BiasMode::Off),
        (Variant::SoftmaxBias, BiasMode::Projected),
        (Variant::SoftmaxBias, BiasMode::OneHot),
        (Variant::ConcatCell, BiasMode::Off),
        (Variant::ConcatCell, BiasMode::Projected),
        (Variant::FactorCell, BiasMode::Off),
        (Variant::FactorCell, BiasMode::Projected),
        (Variant::FactorCell, BiasMode::OneHot),
    ]
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

use factorcell::training::{batch_loss, cross_entropy_loss, sampled_softmax_loss, LossOptions, NegativeSampler, Sequence};

/// Worst relative error `|analytic − numeric| / (|numeric| + 1e-8)` per
/// parameter array. The numeric gradient is the fourth-order central
/// difference `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`, which keeps
/// truncation negligible at step sizes large enough to avoid roundoff.
pub fn gradient_errors(
    model: &Model,
    batch: &[Sequence<'_>],
    sampler: Option<&NegativeSampler>,
    opts: &LossOptions,
    h: f64,
) -> Vec<(&'static str, f64)> {
    let (_, grads) = match sampler {
        Some(s) => sampled_softmax_loss(model, batch, s, opts).unwrap(),
        None => cross_entropy_loss(model, batch, opts).unwrap(),
    };
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (name, g) in grads.arrays() {
        let mut worst: f64 = 0.0;
        for i in 0..g.len() {
            let orig = probe.params.array(name).unwrap().data()[i];
            let mut at = |x: f64| {
                probe.params.array_mut(name).unwrap().data_mut()[i] = x;
                batch_loss(&probe, batch, sampler, opts).unwrap()
            };
            let (p1, m1, p2, m2) = (at(orig + h), at(orig - h), at(orig + 2.0 * h), at(orig - 2.0 * h));
            at(orig);
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let rel = (g.data()[i] - numeric).abs() / (numeric.abs() + 1e-8);
            worst = worst.max(rel);
        }
        out.push((name, worst));
    }
    out
}
