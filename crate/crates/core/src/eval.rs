//! Evaluation: context-conditioned perplexity, generative classification,
//! per-token likelihood ratios between contexts, boosted-word inspection and
//! context-embedding export.
//!
//! Perplexity counts every predicted position, including the end sentinel.
//! Per-document and per-label work runs in parallel, but all reductions are
//! done sequentially in input order so results are reproducible.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use crate::context::{ContextSchema, ContextValue};
use crate::data::{preprocess, Document, BOS, PAD};
use crate::error::{Error, Result};
use crate::math::{argmax, compensated_sum, log_sum_exp};
use crate::model::{BiasMode, Model};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub perplexity: f64,
    /// Number of predicted tokens.
    pub tokens: usize,
    pub total_logprob: f64,
    pub doc_logprobs: Vec<f64>,
}

impl EvalReport {
    fn from_tokens(per_doc: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(i) = per_doc.iter().position(|d| d.iter().any(|x| !x.is_finite())) {
            return Err(Error::non_finite(format!("log-probability of document {}", i + 1), None));
        }
        let tokens = per_doc.iter().map(Vec::len).sum();
        let total = compensated_sum(per_doc.iter().flatten().copied());
        let doc_logprobs = per_doc.into_iter().map(compensated_sum).collect();
        Ok(EvalReport {
            perplexity: (-total / tokens as f64).exp(),
            tokens,
            total_logprob: total,
            doc_logprobs,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({ "perplexity": self.perplexity, "tokens": self.tokens })
    }

    pub fn to_text(&self) -> String {
        format!(
            "perplexity  {:>12.6}\ntokens      {:>12}\nlog-prob    {:>12.4}\n",
            self.perplexity, self.tokens, self.total_logprob
        )
    }
}

/// Perplexity of `docs`, each scored under its own context with the full softmax.
pub fn perplexity(model: &Model, docs: &[Document]) -> Result<EvalReport> {
    if docs.is_empty() {
        return Err(Error::Argument("no documents to evaluate".into()));
    }
    let scores: Vec<Result<Vec<f64>>> = docs
        .par_iter()
        .map(|d| model.token_logprobs(&d.context, &d.tokens))
        .collect();
    EvalReport::from_tokens(scores.into_iter().collect::<Result<_>>()?)
}

/// Per-token `log((1/n)·Σ p_i)` over an ensemble of models that share a vocabulary.
pub fn ensemble_token_logprobs(
    models: &[Model],
    value: &ContextValue,
    tokens: &[usize],
) -> Result<Vec<f64>> {
    let Some(first) = models.first() else {
        return Err(Error::Argument("empty ensemble".into()));
    };
    if models.iter().any(|m| m.vocab != first.vocab) {
        return Err(Error::Argument("ensemble members must share a vocabulary".into()));
    }
    let per_model = models
        .iter()
        .map(|m| m.token_logprobs(value, tokens))
        .collect::<Result<Vec<_>>>()?;
    let ln_n = (models.len() as f64).ln();
    Ok((0..per_model[0].len())
        .map(|t| {
            let col: Vec<f64> = per_model.iter().map(|lp| lp[t]).collect();
            log_sum_exp(&col) - ln_n
        })
        .collect())
}

/// Perplexity of an ensemble that averages probabilities, not logits.
pub fn ensemble_perplexity(models: &[Model], docs: &[Document]) -> Result<EvalReport> {
    if docs.is_empty() {
        return Err(Error::Argument("no documents to evaluate".into()));
    }
    let scores: Vec<Result<Vec<f64>>> = docs
        .par_iter()
        .map(|d| ensemble_token_logprobs(models, &d.context, &d.tokens))
        .collect();
    EvalReport::from_tokens(scores.into_iter().collect::<Result<_>>()?)
}

/// A classification target: a name and the complete context it stands for.
#[derive(Clone, Debug, PartialEq)]
pub struct Label {
    pub name: String,
    pub context: ContextValue,
}

/// Labels plus an optional prior, as read from
/// `{"labels": [{"name": ..., "context": {...}}, ...], "prior": [...]}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSet {
    pub labels: Vec<Label>,
    pub prior: Option<Vec<f64>>,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelFile {
    labels: Vec<LabelEntry>,
    #[serde(default)]
    prior: Option<Vec<f64>>,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelEntry {
    name: String,
    context: std::collections::BTreeMap<String, serde_json::Value>,
}

impl LabelSet {
    /// Parse label-file text, validating every context against `schema`.
    pub fn parse(text: &str, schema: &ContextSchema, origin: &Path) -> Result<LabelSet> {
        let file: LabelFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        if file.labels.is_empty() {
            return Err(Error::Argument("label file lists no labels".into()));
        }
        let labels = file
            .labels
            .into_iter()
            .map(|l| {
                Ok(Label {
                    context: schema.value_from_json(&l.context)?,
                    name: l.name,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(p) = &file.prior {
            log_prior(labels.len(), Some(p))?;
        }
        Ok(LabelSet { labels, prior: file.prior })
    }

    pub fn load(path: &Path, schema: &ContextSchema) -> Result<LabelSet> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LabelSet::parse(&text, schema, path)
    }

    pub fn find(&self, name: &str) -> Result<&Label> {
        self.labels
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::Argument(format!("no label named {name:?}")))
    }

    pub fn contexts(&self) -> Vec<ContextValue> {
        self.labels.iter().map(|l| l.context.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub label: usize,
    /// `log p(text | label) + log p(label)` per label.
    pub scores: Vec<f64>,
}

fn log_prior(labels: usize, prior: Option<&[f64]>) -> Result<Vec<f64>> {
    match prior {
        None => Ok(vec![-(labels as f64).ln(); labels]),
        Some(p) => {
            if p.len() != labels || p.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::Argument(format!(
                    "prior needs {labels} non-negative entries"
                )));
            }
            let z: f64 = p.iter().sum();
            if !(z > 0.0) {
                return Err(Error::Argument("prior has zero mass".into()));
            }
            Ok(p.iter().map(|x| (x / z).ln()).collect())
        }
    }
}

/// Index of the highest score; ties go to the lowest index.
pub fn decide(scores: &[f64]) -> usize {
    argmax(scores)
}

/// Bayes-rule classification of a framed token sequence: one forward pass per
/// label with that label's context, plus the log prior (uniform by default).
pub fn classify(
    model: &Model,
    tokens: &[usize],
    labels: &[Label],
    prior: Option<&[f64]>,
) -> Result<Classification> {
    if labels.is_empty() {
        return Err(Error::Argument("empty label set".into()));
    }
    let lp = log_prior(labels.len(), prior)?;
    let likelihoods: Vec<Result<f64>> = labels
        .par_iter()
        .map(|l| model.sequence_logprob(&l.context, tokens))
        .collect();
    let scores = likelihoods
        .into_iter()
        .zip(&lp)
        .map(|(l, p)| l.map(|l| l + p))
        .collect::<Result<Vec<_>>>()?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::non_finite(format!("score of label {:?}", labels[i].name), None));
    }
    Ok(Classification {
        label: decide(&scores),
        scores,
    })
}

/// Preprocess raw text with the model's vocabulary and classify it.
pub fn classify_text(
    model: &Model,
    text: &str,
    labels: &[Label],
    prior: Option<&[f64]>,
) -> Result<Classification> {
    let toks = preprocess(text, model.vocab.unit(), 0)
        .ok_or_else(|| Error::Argument("text is empty after preprocessing".into()))?;
    classify(model, &model.vocab.frame(&toks), labels, prior)
}

/// True label of a document: its `label` field matched by name, else the
/// label whose context equals the document's.
pub fn true_label(doc: &Document, labels: &[Label]) -> Option<usize> {
    match &doc.label {
        Some(name) => labels.iter().position(|l| &l.name == name),
        None => labels.iter().position(|l| l.context == doc.context),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub label_names: Vec<String>,
    /// `confusion[truth][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

impl ClassificationReport {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "accuracy": self.accuracy,
            "labels": self.label_names,
            "confusion": self.confusion,
            "predictions": self.predictions,
        })
    }

    pub fn to_text(&self) -> String {
        let w = self
            .label_names
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(6);
        let mut s = format!("accuracy {:.4}\n\n{:>w$}", self.accuracy, "");
        for n in &self.label_names {
            let _ = write!(s, " {n:>w$}");
        }
        s.push('\n');
        for (n, row) in self.label_names.iter().zip(&self.confusion) {
            let _ = write!(s, "{n:>w$}");
            for c in row {
                let _ = write!(s, " {c:>w$}");
            }
            s.push('\n');
        }
        s
    }
}

/// Classify every document and tally accuracy against `truth`.
pub fn classify_documents(
    model: &Model,
    docs: &[Document],
    labels: &[Label],
    truth: &[usize],
    prior: Option<&[f64]>,
) -> Result<ClassificationReport> {
    if docs.is_empty() {
        return Err(Error::Argument("no documents to classify".into()));
    }
    if truth.len() != docs.len() || truth.iter().any(|&t| t >= labels.len()) {
        return Err(Error::Argument("every document needs a valid true label".into()));
    }
    let mut confusion = vec![vec![0usize; labels.len()]; labels.len()];
    let mut predictions = Vec::with_capacity(docs.len());
    let mut correct = 0usize;
    for (d, &t) in docs.iter().zip(truth) {
        let c = classify(model, &d.tokens, labels, prior)?;
        confusion[t][c.label] += 1;
        correct += usize::from(c.label == t);
        predictions.push(c.label);
    }
    Ok(ClassificationReport {
        accuracy: correct as f64 / docs.len() as f64,
        label_names: labels.iter().map(|l| l.name.clone()).collect(),
        confusion,
        predictions,
    })
}

/// `log p(token | history, a) − log p(token | history, b)` for every predicted
/// token, paired with the token string.
pub fn log_likelihood_ratio(
    model: &Model,
    tokens: &[usize],
    ctx_a: &ContextValue,
    ctx_b: &ContextValue,
) -> Result<Vec<(String, f64)>> {
    let a = model.token_logprobs(ctx_a, tokens)?;
    let b = model.token_logprobs(ctx_b, tokens)?;
    tokens[1..]
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(&t, (x, y))| Ok((model.vocab.token(t)?.to_string(), x - y)))
        .collect()
}

/// Tokens whose output bias is raised the most by `value`, with their offsets.
/// Ties are ordered lexically. Padding and begin sentinels are never listed.
pub fn top_boosted_words(model: &Model, value: &ContextValue, n: usize) -> Result<Vec<(String, f64)>> {
    if model.config.softmax_bias == BiasMode::Off {
        return Err(Error::Capability(
            "model has no softmax-bias adaptation".into(),
        ));
    }
    let cell = model.adapt(value)?;
    let mut scored: Vec<(&str, f64)> = model
        .vocab
        .tokens()
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != PAD && *i != BOS)
        .map(|(i, t)| (t.as_str(), cell.offset[i]))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(scored
        .into_iter()
        .take(n)
        .map(|(t, s)| (t.to_string(), s))
        .collect())
}

/// Write one CSV row per context: field values followed by the embedding.
pub fn write_context_embeddings<W: Write>(
    model: &Model,
    values: &[ContextValue],
    mut out: W,
) -> Result<()> {
    if !model.config.uses_embedding() {
        return Err(Error::Capability(
            "model does not compute a context embedding".into(),
        ));
    }
    let io = |e| Error::io("<csv>", e);
    let mut header: Vec<String> = model
        .schema
        .variables()
        .iter()
        .map(|v| csv_field(&v.name))
        .collect();
    header.extend((0..model.config.context_dim).map(|i| format!("c{i}")));
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for v in values {
        let c = model
            .context_embedding(v)?
            .expect("embedding exists when uses_embedding");
        let mut row: Vec<String> = model.schema.describe(v).iter().map(|s| csv_field(s)).collect();
        row.extend(c.iter().map(|x| format!("{x:?}")));
        writeln!(out, "{}", row.join(",")).map_err(io)?;
    }
    Ok(())
}

pub fn export_context_embeddings(model: &Model, values: &[ContextValue], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_context_embeddings(model, values, &mut w).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write likelihood ratios as `position,token,ratio` CSV.
pub fn write_ratios_csv<W: Write>(ratios: &[(String, f64)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "position,token,log_ratio")?;
    for (i, (t, r)) in ratios.iter().enumerate() {
        writeln!(out, "{},{},{r:?}", i + 1, csv_field(t))?;
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}


#[cfg(test)]
mod label_file_tests {
    use super::*;
    use crate::context::ContextVariable;

    #[test]
    fn parses_labels_and_prior() {
        let schema = ContextSchema::new(vec![ContextVariable::categorical("lang", vec!["en".into(), "fr".into()])]).unwrap();
        let text = r#"{"labels": [{"name": "english", "context": {"lang": "en"}},
                                 {"name": "french", "context": {"lang": "fr"}}],
                      "prior": [3, 1]}"#;
        let set = LabelSet::parse(text, &schema, Path::new("l.json")).unwrap();
        assert_eq!(set.labels.len(), 2);
        assert_eq!(set.prior.as_deref(), Some(&[3.0, 1.0][..]));
        assert_eq!(set.find("french").unwrap().name, "french");
        assert!(set.find("german").is_err());

        let bad = LabelSet::parse("{\n\"labels\": 3}", &schema, Path::new("l.json")).unwrap_err();
        assert!(matches!(bad, Error::Parse { line: 2, .. }), "{bad}");
        let prior = r#"{"labels": [{"name": "e", "context": {"lang": "en"}}], "prior": [1, 2]}"#;
        assert!(LabelSet::parse(prior, &schema, Path::new("l.json")).unwrap_err().is_usage());
    }
}
