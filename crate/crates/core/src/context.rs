//! Context variables and the feed-forward encoder that turns them into the
//! context embedding `c`.
//!
//! Raw metadata is featurized as one block per variable, in schema order: a
//! one-hot block for categorical variables and a single standardized scalar for
//! numeric ones. The encoder is `c = W₂·relu(W₁·x + b₁) + b₂`.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde_json::Value as Json;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Name of the reserved categorical level that absorbs rare and unseen values.
pub const OTHER_LEVEL: &str = "<other>";

#[derive(Clone, Debug, PartialEq)]
pub enum VariableKind {
    /// `levels[0]` is always the reserved rare/unknown bucket.
    Categorical { levels: Vec<String> },
    /// Standardization statistics, frozen from the training split.
    Numeric { mean: f64, stddev: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextVariable {
    pub name: String,
    pub kind: VariableKind,
}

impl ContextVariable {
    pub fn categorical(name: &str, levels: Vec<String>) -> Self {
        ContextVariable {
            name: name.to_string(),
            kind: VariableKind::Categorical { levels },
        }
    }

    /// Categorical variable whose non-reserved levels are named `"1"`, `"2"`, ...
    pub fn categorical_with_cardinality(name: &str, cardinality: usize) -> Self {
        let mut levels = vec![OTHER_LEVEL.to_string()];
        levels.extend((1..cardinality).map(|i| i.to_string()));
        Self::categorical(name, levels)
    }

    pub fn numeric(name: &str, mean: f64, stddev: f64) -> Self {
        ContextVariable {
            name: name.to_string(),
            kind: VariableKind::Numeric { mean, stddev },
        }
    }

    /// Width of this variable's block in the raw feature vector.
    pub fn width(&self) -> usize {
        match &self.kind {
            VariableKind::Categorical { levels } => levels.len(),
            VariableKind::Numeric { .. } => 1,
        }
    }

    pub fn cardinality(&self) -> Option<usize> {
        match &self.kind {
            VariableKind::Categorical { levels } => Some(levels.len()),
            VariableKind::Numeric { .. } => None,
        }
    }
}

/// Declared kind of a context variable before statistics are fitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeclaredKind {
    Categorical,
    Numeric,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContextSchema {
    variables: Vec<ContextVariable>,
}

/// One entry per schema variable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ContextEntry {
    Category(usize),
    Numeric(f64),
    /// Replaced by its expected value during encoding.
    Missing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextValue(pub Vec<ContextEntry>);

impl ContextValue {
    pub fn new(entries: Vec<ContextEntry>) -> Self {
        ContextValue(entries)
    }

    pub fn empty() -> Self {
        ContextValue(Vec::new())
    }

    pub fn entries(&self) -> &[ContextEntry] {
        &self.0
    }
}

impl ContextSchema {
    pub fn new(variables: Vec<ContextVariable>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for v in &variables {
            if !seen.insert(v.name.as_str()) {
                return Err(Error::Schema(format!("duplicate variable name {:?}", v.name)));
            }
            match &v.kind {
                VariableKind::Categorical { levels } => {
                    if levels.len() < 2 {
                        return Err(Error::Schema(format!(
                            "categorical variable {:?} needs cardinality >= 2",
                            v.name
                        )));
                    }
                }
                VariableKind::Numeric { mean, stddev } => {
                    if !(*stddev > 0.0) || !stddev.is_finite() || !mean.is_finite() {
                        return Err(Error::Schema(format!(
                            "numeric variable {:?} needs finite mean and stddev > 0",
                            v.name
                        )));
                    }
                }
            }
        }
        Ok(ContextSchema { variables })
    }

    pub fn empty() -> Self {
        ContextSchema::default()
    }

    /// Fit categorical levels and numeric statistics from raw training records.
    ///
    /// Categorical values seen fewer than `min_count` times fall into the
    /// reserved level 0. Levels are ordered by descending count, then name.
    pub fn fit(
        declared: &[(String, DeclaredKind)],
        records: &[BTreeMap<String, Json>],
        min_count: usize,
    ) -> Result<Self> {
        let mut variables = Vec::with_capacity(declared.len());
        for (name, kind) in declared {
            match kind {
                DeclaredKind::Categorical => {
                    let mut counts: HashMap<String, usize> = HashMap::new();
                    for r in records {
                        if let Some(v) = r.get(name) {
                            if let Some(s) = json_category(v) {
                                *counts.entry(s).or_default() += 1;
                            }
                        }
                    }
                    let mut kept: Vec<(String, usize)> = counts
                        .into_iter()
                        .filter(|(_, c)| *c >= min_count.max(1))
                        .collect();
                    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                    let mut levels = vec![OTHER_LEVEL.to_string()];
                    levels.extend(kept.into_iter().map(|(s, _)| s));
                    if levels.len() < 2 {
                        levels.push(format!("{OTHER_LEVEL}1"));
                    }
                    variables.push(ContextVariable::categorical(name, levels));
                }
                DeclaredKind::Numeric => {
                    let xs: Vec<f64> = records
                        .iter()
                        .filter_map(|r| r.get(name).and_then(Json::as_f64))
                        .collect();
                    let (mean, stddev) = if xs.is_empty() {
                        (0.0, 1.0)
                    } else {
                        let n = xs.len() as f64;
                        let mean = xs.iter().sum::<f64>() / n;
                        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                        let sd = var.sqrt();
                        (mean, if sd > 0.0 { sd } else { 1.0 })
                    };
                    variables.push(ContextVariable::numeric(name, mean, stddev));
                }
            }
        }
        ContextSchema::new(variables)
    }

    pub fn variables(&self) -> &[ContextVariable] {
        &self.variables
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    /// Total width of the raw feature vector.
    pub fn input_width(&self) -> usize {
        self.variables.iter().map(ContextVariable::width).sum()
    }

    /// Number of rows in a one-hot softmax-bias table: the product of all
    /// categorical cardinalities.
    pub fn num_classes(&self) -> usize {
        self.variables
            .iter()
            .filter_map(ContextVariable::cardinality)
            .product()
    }

    pub fn has_categorical(&self) -> bool {
        self.variables.iter().any(|v| v.cardinality().is_some())
    }

    /// Convert a JSON context object into a value. Unknown keys are rejected,
    /// absent keys become [`ContextEntry::Missing`], unseen categories map to
    /// the reserved level.
    pub fn value_from_json(&self, obj: &BTreeMap<String, Json>) -> Result<ContextValue> {
        for key in obj.keys() {
            if !self.variables.iter().any(|v| &v.name == key) {
                return Err(Error::Schema(format!("unknown context key {key:?}")));
            }
        }
        let mut entries = Vec::with_capacity(self.variables.len());
        for v in &self.variables {
            let entry = match (obj.get(&v.name), &v.kind) {
                (None, _) | (Some(Json::Null), _) => ContextEntry::Missing,
                (Some(j), VariableKind::Categorical { levels }) => {
                    let s = json_category(j).ok_or_else(|| {
                        Error::Encoding(format!("{}: expected a category, got {j}", v.name))
                    })?;
                    ContextEntry::Category(levels.iter().position(|l| *l == s).unwrap_or(0))
                }
                (Some(j), VariableKind::Numeric { .. }) => {
                    let x = j.as_f64().ok_or_else(|| {
                        Error::Encoding(format!("{}: expected a number, got {j}", v.name))
                    })?;
                    ContextEntry::Numeric(x)
                }
            };
            entries.push(entry);
        }
        Ok(ContextValue(entries))
    }

    /// Human-readable field values, one per variable (used for CSV export).
    pub fn describe(&self, value: &ContextValue) -> Vec<String> {
        self.variables
            .iter()
            .zip(value.entries())
            .map(|(v, e)| match (e, &v.kind) {
                (ContextEntry::Category(i), VariableKind::Categorical { levels }) => levels
                    .get(*i)
                    .cloned()
                    .unwrap_or_else(|| i.to_string()),
                (ContextEntry::Numeric(x), _) => format!("{x}"),
                (ContextEntry::Category(i), _) => i.to_string(),
                (ContextEntry::Missing, _) => String::new(),
            })
            .collect()
    }

    /// Weights over rows of the one-hot class table (mixed radix over the
    /// categorical variables in schema order). A missing categorical spreads
    /// uniformly across its levels.
    pub fn class_weights(&self, value: &ContextValue) -> Result<Vec<(usize, f64)>> {
        self.check_arity(value)?;
        let mut acc: Vec<(usize, f64)> = vec![(0, 1.0)];
        for (v, e) in self.variables.iter().zip(value.entries()) {
            let Some(card) = v.cardinality() else { continue };
            let choices: Vec<(usize, f64)> = match e {
                ContextEntry::Category(i) if *i < card => vec![(*i, 1.0)],
                ContextEntry::Missing => (0..card).map(|i| (i, 1.0 / card as f64)).collect(),
                other => {
                    return Err(Error::Encoding(format!(
                        "{}: invalid entry {other:?} for cardinality {card}",
                        v.name
                    )))
                }
            };
            acc = acc
                .iter()
                .flat_map(|(cls, w)| choices.iter().map(move |(i, wi)| (cls * card + i, w * wi)))
                .collect();
        }
        Ok(acc)
    }

    fn check_arity(&self, value: &ContextValue) -> Result<()> {
        if value.entries().len() != self.variables.len() {
            return Err(Error::Encoding(format!(
                "context has {} entries, schema declares {}",
                value.entries().len(),
                self.variables.len()
            )));
        }
        Ok(())
    }
}

fn json_category(v: &Json) -> Option<String> {
    match v {
        Json::String(s) => Some(s.clone()),
        Json::Number(n) => Some(n.to_string()),
        Json::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Featurize a context value: one-hot blocks and standardized scalars.
pub fn encode_raw(schema: &ContextSchema, value: &ContextValue) -> Result<Vec<f64>> {
    schema.check_arity(value)?;
    let mut out = Vec::with_capacity(schema.input_width());
    for (v, e) in schema.variables.iter().zip(value.entries()) {
        match (&v.kind, e) {
            (VariableKind::Categorical { levels }, ContextEntry::Category(i)) => {
                if *i >= levels.len() {
                    return Err(Error::Encoding(format!(
                        "{}: category {i} out of range for cardinality {}",
                        v.name,
                        levels.len()
                    )));
                }
                let start = out.len();
                out.resize(start + levels.len(), 0.0);
                out[start + i] = 1.0;
            }
            (VariableKind::Categorical { levels }, ContextEntry::Missing) => {
                let p = 1.0 / levels.len() as f64;
                out.extend(std::iter::repeat_n(p, levels.len()));
            }
            (VariableKind::Numeric { mean, stddev }, ContextEntry::Numeric(x)) => {
                if !x.is_finite() {
                    return Err(Error::non_finite(format!("context variable {}", v.name), None));
                }
                out.push((x - mean) / stddev);
            }
            (VariableKind::Numeric { .. }, ContextEntry::Missing) => out.push(0.0),
            (_, e) => {
                return Err(Error::Encoding(format!(
                    "{}: entry {e:?} does not match the declared kind",
                    v.name
                )))
            }
        }
    }
    Ok(out)
}

/// One-hidden-layer ReLU network producing the `k`-dimensional embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextEncoder {
    /// hidden × input
    pub hidden_weight: Tensor,
    pub hidden_bias: Tensor,
    /// k × hidden
    pub output_weight: Tensor,
    pub output_bias: Tensor,
}

/// Intermediate values of one encoder evaluation, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    pub raw: Vec<f64>,
    pub pre_activation: Vec<f64>,
    pub hidden: Vec<f64>,
    pub embedding: Vec<f64>,
}

impl ContextEncoder {
    pub fn zeros(input: usize, hidden: usize, k: usize) -> Self {
        ContextEncoder {
            hidden_weight: Tensor::zeros(&[hidden, input]),
            hidden_bias: Tensor::zeros(&[hidden]),
            output_weight: Tensor::zeros(&[k, hidden]),
            output_bias: Tensor::zeros(&[k]),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(input: usize, hidden: usize, k: usize, rng: &mut R) -> Self {
        let mut enc = Self::zeros(input, hidden, k);
        glorot_fill(&mut enc.hidden_weight, input, hidden, 1.0, rng);
        glorot_fill(&mut enc.output_weight, hidden, k, 1.0, rng);
        enc
    }

    pub fn input_width(&self) -> usize {
        self.hidden_weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.output_weight.rows()
    }

    pub fn trace(&self, raw: &[f64]) -> Result<EncoderTrace> {
        if raw.len() != self.input_width() {
            return Err(Error::dim(
                "embed_context",
                self.hidden_weight.shape(),
                &[raw.len()],
            ));
        }
        let mut pre = self.hidden_weight.matvec(raw)?;
        for (p, b) in pre.iter_mut().zip(self.hidden_bias.data()) {
            *p += b;
        }
        let hidden: Vec<f64> = pre.iter().map(|x| x.max(0.0)).collect();
        let mut c = self.output_weight.matvec(&hidden)?;
        for (ci, b) in c.iter_mut().zip(self.output_bias.data()) {
            *ci += b;
        }
        Ok(EncoderTrace {
            raw: raw.to_vec(),
            pre_activation: pre,
            hidden,
            embedding: c,
        })
    }
}

/// Map a featurized context through the encoder.
pub fn embed_context(enc: &ContextEncoder, raw: &[f64]) -> Result<Vec<f64>> {
    Ok(enc.trace(raw)?.embedding)
}

/// Uniform(−s, s) with `s = scale·sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot_fill<R: Rng>(
    t: &mut Tensor,
    fan_in: usize,
    fan_out: usize,
    scale: f64,
    rng: &mut R,
) {
    let s = scale * (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    for x in t.data_mut() {
        *x = rng.random_range(-s..s);
    }
}
