mod common;

use common::*;
use factorcell::context::{embed_context, encode_raw, ContextEntry};
use factorcell::data::{BOS, EOS};
use factorcell::math::{log_softmax, sigmoid};
use factorcell::model::{cell_step, compute_adaptation};
use factorcell::{BiasMode, CellState, ContextValue, Model, ModelConfig, Tensor, Variant};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

const DIMS: (usize, usize, usize, usize) = (4, 6, 3, 2);

/// Re-express `m`'s shared arrays as a model of another variant.
fn as_variant(m: &Model, variant: Variant, mode: BiasMode) -> Model {
    let cfg = ModelConfig {
        variant,
        softmax_bias: mode,
        rank: if variant == Variant::FactorCell { m.config.rank } else { 0 },
        ..m.config.clone()
    };
    let mut p = m.params.clone();
    if variant != Variant::FactorCell {
        p.left_basis = None;
        p.right_basis = None;
    }
    if !variant.adapts_recurrent_bias() {
        p.context_bias = None;
    }
    if mode != BiasMode::Projected {
        p.softmax_projection = None;
    }
    if mode != BiasMode::OneHot {
        p.class_bias = None;
    }
    if !cfg.uses_embedding() {
        p.encoder = None;
    }
    Model::new(cfg, m.schema.clone(), m.vocab.clone(), p).unwrap()
}

/// Logits after every step of `tokens`.
fn logit_trace(m: &Model, ctx: &ContextValue, tokens: &[usize]) -> Vec<Vec<f64>> {
    let cell = m.adapt(ctx).unwrap();
    let mut s = m.initial_state();
    tokens
        .iter()
        .map(|&t| {
            let (next, logits) = m.step(&cell, t, &s).unwrap();
            s = next;
            logits
        })
        .collect()
}

fn assert_same_logits(a: &Model, b: &Model, trials: usize, seed: u64) {
    let mut r = rng(seed);
    for _ in 0..trials {
        let ctx = context(&mut r);
        let len = r.random_range(2..8);
        let toks = tokens(&mut r, len, a.vocab_size());
        for (x, y) in logit_trace(a, &ctx, &toks).iter().zip(logit_trace(b, &ctx, &toks)) {
            assert!(max_abs_diff(x, &y) <= 1e-12);
        }
    }
}

#[test]
fn unadapted_cell_is_the_base_cell() {
    let m = model(Variant::Unadapted, BiasMode::Off, DIMS, 1);
    let mut r = rng(2);
    for _ in 0..5 {
        let cell = m.adapt(&context(&mut r)).unwrap();
        assert_eq!(cell.weight, m.params.recurrent);
        assert_eq!(cell.bias, m.params.recurrent_bias.data());
        assert!(cell.offset.iter().all(|x| *x == 0.0));
    }
}

#[test]
fn special_case_chain() {
    let mut factor = model(Variant::FactorCell, BiasMode::Projected, DIMS, 3);
    factor.params.left_basis.as_mut().unwrap().fill(0.0);
    factor.params.right_basis.as_mut().unwrap().fill(0.0);
    let concat = as_variant(&factor, Variant::ConcatCell, BiasMode::Projected);
    let mut r = rng(4);
    for _ in 0..10 {
        let c = context(&mut r);
        assert_eq!(factor.adapt(&c).unwrap(), concat.adapt(&c).unwrap());
    }
    assert_same_logits(&factor, &concat, 100, 5);

    let mut concat = as_variant(&factor, Variant::ConcatCell, BiasMode::Off);
    concat.params.context_bias.as_mut().unwrap().fill(0.0);
    let unadapted = as_variant(&concat, Variant::Unadapted, BiasMode::Off);
    assert_same_logits(&concat, &unadapted, 100, 6);

    let mut sb = as_variant(&factor, Variant::SoftmaxBias, BiasMode::Projected);
    sb.params.softmax_projection.as_mut().unwrap().fill(0.0);
    assert_same_logits(&sb, &unadapted, 100, 7);
}

#[test]
fn bias_form_equals_input_concatenation() {
    let m = model(Variant::ConcatCell, BiasMode::Off, DIMS, 8);
    let (e, d, k, _) = DIMS;
    let w = &m.params.recurrent;
    let v = m.params.context_bias.as_ref().unwrap();
    // Ŵ = [W V], applied to [w, h, c]
    let wide = Tensor::from_fn(&[3 * d, e + d + k], |i| {
        let (row, col) = (i / (e + d + k), i % (e + d + k));
        if col < e + d {
            w.get2(row, col)
        } else {
            v.get2(row, col - e - d)
        }
    });
    let mut r = rng(9);
    for _ in 0..100 {
        let ctx = context(&mut r);
        let c = m.context_embedding(&ctx).unwrap().unwrap();
        let word: Vec<f64> = (0..e).map(|_| r.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = word.iter().chain(&h).chain(&c).copied().collect();
        let mut expect = wide.matvec(&x).unwrap();
        for (z, b) in expect.iter_mut().zip(m.params.recurrent_bias.data()) {
            *z += b;
        }
        let got = m.adapt(&ctx).unwrap().preactivations(&word, &h).unwrap();
        assert!(max_abs_diff(&got, &expect) <= 1e-12);
    }
}

#[test]
fn cached_and_recomputed_adaptation_agree_exactly() {
    for (v, mode) in all_configurations() {
        let m = model(v, mode, DIMS, 10);
        let mut r = rng(11);
        for _ in 0..5 {
            let ctx = context(&mut r);
            let toks = tokens(&mut r, 12, m.vocab_size());
            assert_eq!(
                m.sequence_logprob(&ctx, &toks).unwrap(),
                m.sequence_logprob_uncached(&ctx, &toks).unwrap()
            );
        }
    }
}

#[test]
fn adaptation_rank_is_bounded() {
    for (k, r) in [(3, 1), (4, 2), (5, 3)] {
        let m = model(Variant::FactorCell, BiasMode::Off, (5, 6, k, r), 12);
        let (zl, zr) = (
            m.params.left_basis.as_ref().unwrap(),
            m.params.right_basis.as_ref().unwrap(),
        );
        let mut g = rng(13);
        for _ in 0..50 {
            let c: Vec<f64> = (0..k).map(|_| g.random_range(-2.0..2.0)).collect();
            let a = compute_adaptation(&c, zl, zr).unwrap();
            let mat = DMatrix::from_row_slice(a.rows(), a.cols(), a.data());
            let mut sv: Vec<f64> = mat.singular_values().iter().copied().collect();
            sv.sort_by(|x, y| y.total_cmp(x));
            assert!(sv[r - 1] > 1e-6, "rank collapsed below {r}: {sv:?}");
            assert!(sv[r..].iter().all(|s| *s < 1e-10), "r={r}: {sv:?}");
        }
    }
}

#[test]
fn parameter_count_difference_is_the_two_bases() {
    let (e, d, k, r) = DIMS;
    let factor = model(Variant::FactorCell, BiasMode::Projected, DIMS, 14);
    let concat = as_variant(&factor, Variant::ConcatCell, BiasMode::Projected);
    assert_eq!(
        factor.parameter_count() - concat.parameter_count(),
        k * (e + d) * r + r * 3 * d * k
    );
}

#[test]
fn output_logits_examples() {
    let m = model(Variant::SoftmaxBias, BiasMode::OneHot, DIMS, 15);
    let d = m.config.hidden_dim;
    // h = 0, no offset → bias only
    let mut cell = m.adapt(&ContextValue::new(vec![ContextEntry::Category(1), ContextEntry::Missing])).unwrap();
    let zero_offset = vec![0.0; m.vocab_size()];
    let table_row = cell.offset.clone();
    assert_eq!(table_row, m.params.class_bias.as_ref().unwrap().row(1));
    cell.offset = zero_offset;
    assert_eq!(m.output_logits(&cell, &vec![0.0; d]).unwrap(), m.params.output_bias.data());

    // dense oracle E·(L·h) + b_out + offset
    let mut r = rng(16);
    let cell = m.adapt(&ContextValue::new(vec![ContextEntry::Category(2), ContextEntry::Numeric(1.0)])).unwrap();
    let h: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
    let l = m.params.projection.as_ref().unwrap();
    let e = &m.params.embedding;
    let got = m.output_logits(&cell, &h).unwrap();
    for (v, g) in got.iter().enumerate() {
        let mut s = m.params.output_bias.data()[v] + cell.offset[v];
        for a in 0..e.cols() {
            let lh: f64 = (0..d).map(|j| l.get2(a, j) * h[j]).sum();
            s += e.get2(v, a) * lh;
        }
        assert!((g - s).abs() < 1e-12);
    }
}

#[test]
fn sequence_logprob_examples() {
    // forced-uniform logits: every step costs log(1/|V|)
    let mut m = model(Variant::Unadapted, BiasMode::Off, DIMS, 17);
    m.params.embedding.fill(0.0);
    m.params.output_bias.fill(0.0);
    let v = m.vocab_size() as f64;
    let ctx = ContextValue::new(vec![ContextEntry::Missing, ContextEntry::Missing]);
    let toks = [BOS, 5, 6, 4, EOS];
    let lp = m.sequence_logprob(&ctx, &toks).unwrap();
    assert!((lp - 4.0 * (1.0 / v).ln()).abs() < 1e-12);

    // single predicted token and an explicit three-step chain
    let m = model(Variant::FactorCell, BiasMode::Projected, DIMS, 18);
    let ctx = context(&mut rng(19));
    let cell = m.adapt(&ctx).unwrap();
    let one = m.sequence_logprob(&ctx, &[BOS, 7]).unwrap();
    let (_, logits) = m.step(&cell, BOS, &m.initial_state()).unwrap();
    assert!((one - log_softmax(&logits)[7]).abs() < 1e-12);

    let toks = [BOS, 6, 8, EOS];
    let mut state = m.initial_state();
    let mut expect = 0.0;
    for w in toks.windows(2) {
        let (s, logits) = m.step(&cell, w[0], &state).unwrap();
        let z = logits.iter().map(|l| l.exp()).sum::<f64>();
        expect += (logits[w[1]].exp() / z).ln();
        state = s;
    }
    assert!((m.sequence_logprob(&ctx, &toks).unwrap() - expect).abs() < 1e-10);

    assert!(m.sequence_logprob(&ctx, &[BOS, 99]).is_err());
}

#[test]
fn encoder_is_lipschitz_in_numeric_inputs() {
    let m = model(Variant::ConcatCell, BiasMode::Off, DIMS, 20);
    let enc = m.params.encoder.as_ref().unwrap();
    let op_norm = |t: &Tensor| {
        DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
            .singular_values()
            .max()
    };
    let stddev = 5.0;
    let bound = op_norm(&enc.output_weight) * op_norm(&enc.hidden_weight) / stddev;
    let mut r = rng(21);
    for _ in 0..200 {
        let cat = ContextEntry::Category(r.random_range(0..3));
        let x = r.random_range(20.0..60.0);
        let delta = r.random_range(-3.0..3.0);
        let embed = |lat: f64| {
            let raw = encode_raw(&m.schema, &ContextValue::new(vec![cat, ContextEntry::Numeric(lat)])).unwrap();
            embed_context(enc, &raw).unwrap()
        };
        let (a, b) = (embed(x), embed(x + delta));
        let dist = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(dist <= bound * delta.abs() + 1e-12, "{dist} > {}", bound * delta.abs());
        assert_eq!(embed(x), a, "embedding must be deterministic");
    }
}

proptest! {
    #[test]
    fn memory_is_a_convex_combination(
        seed in any::<u64>(),
        m_prev in prop::collection::vec(-3.0f64..3.0, 5),
        h_prev in prop::collection::vec(-1.0f64..1.0, 5),
    ) {
        let m = model(Variant::FactorCell, BiasMode::Off, (3, 5, 2, 2), seed);
        let ctx = context(&mut rng(seed));
        let cell = m.adapt(&ctx).unwrap();
        let w = m.word_embedding(4).unwrap();
        let state = CellState { h: h_prev.clone(), m: m_prev.clone() };
        let next = cell_step(&cell, w, &state).unwrap();
        let z = cell.preactivations(w, &h_prev).unwrap();
        let d = 5;
        let bound = m_prev.iter().fold(1.0f64, |a, x| a.max(x.abs()));
        for j in 0..d {
            let f = sigmoid(z[d + j] + 1.0);
            let cand = z[j].tanh();
            let lo = m_prev[j].min(cand) - 1e-12;
            let hi = m_prev[j].max(cand) + 1e-12;
            prop_assert!(next.m[j] >= lo && next.m[j] <= hi);
            prop_assert!((next.m[j] - (m_prev[j] * f + (1.0 - f) * cand)).abs() < 1e-12);
            prop_assert!(next.m[j].abs() <= bound + 1e-12);
        }
    }
}
