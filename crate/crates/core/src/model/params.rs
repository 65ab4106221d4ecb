use rand::Rng;

use super::config::{BiasMode, ModelConfig, Variant};
use crate::context::{glorot_fill, ContextEncoder, ContextSchema};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Every learnable array. Optional arrays are absent for variants that do not
/// use them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// E: |V|×e, shared by the input lookup and the output layer.
    pub embedding: Tensor,
    /// L: e×d, present only when e ≠ d.
    pub projection: Option<Tensor>,
    /// W: 3d×(e+d), gate rows ordered [i, f, o].
    pub recurrent: Tensor,
    /// b: 3d
    pub recurrent_bias: Tensor,
    /// V: 3d×k
    pub context_bias: Option<Tensor>,
    /// Z_L: k×(e+d)×r
    pub left_basis: Option<Tensor>,
    /// Z_R: r×3d×k
    pub right_basis: Option<Tensor>,
    /// b_out: |V|
    pub output_bias: Tensor,
    /// Q: |V|×k
    pub softmax_projection: Option<Tensor>,
    /// classes×|V|
    pub class_bias: Option<Tensor>,
    pub encoder: Option<ContextEncoder>,
}

impl ModelParams {
    /// All-zero arrays with the shapes `cfg` prescribes.
    pub fn zeros(cfg: &ModelConfig, schema: &ContextSchema) -> Self {
        let (v, e, d, k, r) = (
            cfg.vocab_size,
            cfg.word_dim,
            cfg.hidden_dim,
            cfg.context_dim,
            cfg.rank,
        );
        let factor = cfg.variant == Variant::FactorCell;
        ModelParams {
            embedding: Tensor::zeros(&[v, e]),
            projection: cfg.has_projection().then(|| Tensor::zeros(&[e, d])),
            recurrent: Tensor::zeros(&[3 * d, e + d]),
            recurrent_bias: Tensor::zeros(&[3 * d]),
            context_bias: cfg
                .variant
                .adapts_recurrent_bias()
                .then(|| Tensor::zeros(&[3 * d, k])),
            left_basis: factor.then(|| Tensor::zeros(&[k, e + d, r])),
            right_basis: factor.then(|| Tensor::zeros(&[r, 3 * d, k])),
            output_bias: Tensor::zeros(&[v]),
            softmax_projection: (cfg.softmax_bias == BiasMode::Projected)
                .then(|| Tensor::zeros(&[v, k])),
            class_bias: (cfg.softmax_bias == BiasMode::OneHot)
                .then(|| Tensor::zeros(&[schema.num_classes(), v])),
            encoder: cfg
                .uses_embedding()
                .then(|| ContextEncoder::zeros(schema.input_width(), cfg.encoder_width(), k)),
        }
    }

    /// Glorot-uniform matrices, zero biases, and the adaptation bases at a
    /// tenth of the Glorot scale so training starts close to ConcatCell.
    pub fn init<R: Rng>(cfg: &ModelConfig, schema: &ContextSchema, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg, schema);
        let (v, e, d, k, r) = (
            cfg.vocab_size,
            cfg.word_dim,
            cfg.hidden_dim,
            cfg.context_dim,
            cfg.rank,
        );
        glorot_fill(&mut p.embedding, v, e, 1.0, rng);
        if let Some(l) = p.projection.as_mut() {
            glorot_fill(l, d, e, 1.0, rng);
        }
        glorot_fill(&mut p.recurrent, e + d, 3 * d, 1.0, rng);
        if let Some(t) = p.context_bias.as_mut() {
            glorot_fill(t, k, 3 * d, 1.0, rng);
        }
        if let Some(t) = p.left_basis.as_mut() {
            glorot_fill(t, e + d, r, 0.1, rng);
        }
        if let Some(t) = p.right_basis.as_mut() {
            glorot_fill(t, r, 3 * d, 0.1, rng);
        }
        if let Some(t) = p.softmax_projection.as_mut() {
            glorot_fill(t, k, v, 1.0, rng);
        }
        if p.encoder.is_some() {
            p.encoder = Some(ContextEncoder::init(
                schema.input_width(),
                cfg.encoder_width(),
                k,
                rng,
            ));
        }
        p
    }

    /// Named views of every present array, in a fixed order.
    pub fn arrays(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = vec![("embedding", &self.embedding)];
        if let Some(t) = &self.projection {
            out.push(("projection", t));
        }
        out.push(("recurrent", &self.recurrent));
        out.push(("recurrent_bias", &self.recurrent_bias));
        if let Some(t) = &self.context_bias {
            out.push(("context_bias", t));
        }
        if let Some(t) = &self.left_basis {
            out.push(("left_basis", t));
        }
        if let Some(t) = &self.right_basis {
            out.push(("right_basis", t));
        }
        out.push(("output_bias", &self.output_bias));
        if let Some(t) = &self.softmax_projection {
            out.push(("softmax_projection", t));
        }
        if let Some(t) = &self.class_bias {
            out.push(("class_bias", t));
        }
        if let Some(enc) = &self.encoder {
            out.push(("encoder.hidden_weight", &enc.hidden_weight));
            out.push(("encoder.hidden_bias", &enc.hidden_bias));
            out.push(("encoder.output_weight", &enc.output_weight));
            out.push(("encoder.output_bias", &enc.output_bias));
        }
        out
    }

    /// Mutable counterpart of [`arrays`](Self::arrays), same order.
    pub fn arrays_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut out = vec![("embedding", &mut self.embedding)];
        if let Some(t) = &mut self.projection {
            out.push(("projection", t));
        }
        out.push(("recurrent", &mut self.recurrent));
        out.push(("recurrent_bias", &mut self.recurrent_bias));
        if let Some(t) = &mut self.context_bias {
            out.push(("context_bias", t));
        }
        if let Some(t) = &mut self.left_basis {
            out.push(("left_basis", t));
        }
        if let Some(t) = &mut self.right_basis {
            out.push(("right_basis", t));
        }
        out.push(("output_bias", &mut self.output_bias));
        if let Some(t) = &mut self.softmax_projection {
            out.push(("softmax_projection", t));
        }
        if let Some(t) = &mut self.class_bias {
            out.push(("class_bias", t));
        }
        if let Some(enc) = &mut self.encoder {
            out.push(("encoder.hidden_weight", &mut enc.hidden_weight));
            out.push(("encoder.hidden_bias", &mut enc.hidden_bias));
            out.push(("encoder.output_weight", &mut enc.output_weight));
            out.push(("encoder.output_bias", &mut enc.output_bias));
        }
        out
    }

    pub fn array(&self, name: &str) -> Option<&Tensor> {
        self.arrays().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn array_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.arrays_mut()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t)
    }

    pub fn parameter_count(&self) -> usize {
        self.arrays().iter().map(|(_, t)| t.len()).sum()
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.arrays_mut() {
            t.fill(0.0);
        }
        z
    }

    /// `self += alpha · other`; layouts must match.
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) -> Result<()> {
        let theirs = other.arrays();
        let mut mine = self.arrays_mut();
        if mine.len() != theirs.len() {
            return Err(Error::Argument("parameter layouts differ".into()));
        }
        for ((n, a), (m, b)) in mine.iter_mut().zip(&theirs) {
            if n != m || a.shape() != b.shape() {
                return Err(Error::dim("ModelParams::axpy", a.shape(), b.shape()));
            }
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += alpha * y;
            }
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, alpha: f64) {
        for (_, t) in self.arrays_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= alpha);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.arrays()
            .iter()
            .map(|(_, t)| t.sum_squares())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|(_, t)| t.is_finite())
    }

    /// Round every entry to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for (_, t) in self.arrays_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    /// Check every array against the shapes `cfg` prescribes.
    pub fn check_layout(&self, cfg: &ModelConfig, schema: &ContextSchema) -> Result<()> {
        let expected = ModelParams::zeros(cfg, schema);
        let want = expected.arrays();
        let have = self.arrays();
        fn names(v: &[(&'static str, &Tensor)]) -> Vec<&'static str> {
            v.iter().map(|(n, _)| *n).collect()
        }
        if names(&want) != names(&have) {
            return Err(Error::Config(format!(
                "parameter arrays {:?} do not match configuration (expected {:?})",
                names(&have),
                names(&want)
            )));
        }
        for ((n, a), (_, b)) in have.iter().zip(&want) {
            if a.shape() != b.shape() {
                return Err(Error::Config(format!(
                    "array {n} has shape {:?}, expected {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }
}
