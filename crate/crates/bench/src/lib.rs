//! Shared fixtures for the benches.

use factorcell::context::ContextEntry;
use factorcell::data::BOS;
use factorcell::{
    BiasMode, ContextSchema, ContextValue, ContextVariable, Model, ModelConfig, Unit, Variant,
    Vocabulary,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(e, d, k, r)` used by every bench.
pub const DIMS: (usize, usize, usize, usize) = (32, 64, 4, 4);

pub fn schema() -> ContextSchema {
    ContextSchema::new(vec![
        ContextVariable::categorical_with_cardinality("lang", 8),
        ContextVariable::numeric("lat", 40.0, 5.0),
    ])
    .unwrap()
}

/// Character-sized vocabulary: reserved ids plus `extra` letters.
pub fn vocab(extra: usize) -> Vocabulary {
    let entries = (0..extra)
        .map(|i| (char::from_u32('a' as u32 + i as u32).unwrap().to_string(), (extra - i) as u64))
        .collect();
    Vocabulary::from_entries(Unit::Character, entries).unwrap()
}

/// Freshly initialized model of `variant` over a 30-symbol vocabulary.
pub fn model(variant: Variant, mode: BiasMode) -> Model {
    let voc = vocab(26);
    let (e, d, k, r) = DIMS;
    let cfg = ModelConfig {
        variant,
        vocab_size: voc.len(),
        word_dim: e,
        hidden_dim: d,
        context_dim: k,
        rank: if variant == Variant::FactorCell { r } else { 0 },
        softmax_bias: mode,
        unit: Unit::Character,
        ..ModelConfig::default()
    };
    Model::init(cfg, schema(), voc, 7).unwrap()
}

pub fn context(seed: u64) -> ContextValue {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    ContextValue::new(vec![
        ContextEntry::Category(r.random_range(0..8)),
        ContextEntry::Numeric(r.random_range(30.0..50.0)),
    ])
}

/// `<s>` followed by `len` random non-reserved ids.
pub fn sequence(len: usize, vocab_size: usize, seed: u64) -> Vec<usize> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut t = vec![BOS];
    t.extend((0..len).map(|_| r.random_range(4..vocab_size)));
    t
}
