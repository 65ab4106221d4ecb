//! Corpus ingestion: text normalization, vocabulary, JSONL records and
//! length-bucketed batching.
//!
//! Word-mode normalization lowercases, keeps alphanumeric characters, keeps an
//! apostrophe (`'` or `’`) or hyphen only when it sits between two
//! alphanumerics, and turns every other character into a token boundary.
//! Character mode lowercases and keeps every Unicode scalar value.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::Deserialize;
use serde_json::Value as Json;

use crate::context::{ContextSchema, ContextValue, DeclaredKind};
use crate::error::{Error, Result};
use crate::rng;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Unit {
    #[default]
    Word,
    Character,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::Word => "word",
            Unit::Character => "character",
        })
    }
}

impl FromStr for Unit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Unit::Word),
            "character" | "char" => Ok(Unit::Character),
            _ => Err(Error::Config(format!("unknown unit {s:?}"))),
        }
    }
}

fn is_joiner(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '-')
}

/// Normalize and tokenize `text`, keeping at most `cap` tokens (0 = no cap).
/// Returns `None` when nothing survives normalization.
pub fn preprocess(text: &str, unit: Unit, cap: usize) -> Option<Vec<String>> {
    let lower = text.to_lowercase();
    let mut tokens: Vec<String> = match unit {
        Unit::Character => lower.chars().map(String::from).collect(),
        Unit::Word => {
            let chars: Vec<char> = lower.chars().collect();
            let mut cleaned = String::with_capacity(lower.len());
            for (i, &c) in chars.iter().enumerate() {
                let keep = c.is_alphanumeric()
                    || (is_joiner(c)
                        && i > 0
                        && chars[i - 1].is_alphanumeric()
                        && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric()));
                cleaned.push(if keep { c } else { ' ' });
            }
            cleaned.split_whitespace().map(String::from).collect()
        }
    };
    if cap > 0 {
        tokens.truncate(cap);
    }
    if tokens.is_empty() {
        None
    } else {
        Some(tokens)
    }
}

/// Bijection between tokens and ids with four reserved ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    unit: Unit,
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build from explicit `(token, count)` pairs, in id order after the
    /// reserved entries.
    pub fn from_entries(unit: Unit, entries: Vec<(String, u64)>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut counts = vec![0; RESERVED.len()];
        for (t, c) in entries {
            tokens.push(t);
            counts.push(c);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Argument(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary {
            unit,
            tokens,
            counts,
            index,
        })
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens.get(id).map(String::as_str).ok_or(Error::Vocab {
            id,
            size: self.tokens.len(),
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts.get(id).copied().unwrap_or(0)
    }

    /// Ids for `tokens`, framed by begin and end sentinels.
    pub fn frame(&self, tokens: &[String]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(BOS);
        ids.extend(tokens.iter().map(|t| self.id(t)));
        ids.push(EOS);
        ids
    }

    /// Join token strings back into text (space-separated for words).
    pub fn render(&self, ids: &[usize]) -> Result<String> {
        let sep = match self.unit {
            Unit::Word => " ",
            Unit::Character => "",
        };
        let parts: Result<Vec<&str>> = ids.iter().map(|&i| self.token(i)).collect();
        Ok(parts?.join(sep))
    }

    /// Write `id<TAB>token<TAB>count` lines. Tabs, newlines and backslashes in
    /// tokens are escaped.
    pub fn dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, (t, c)) in self.tokens.iter().zip(&self.counts).enumerate() {
            let esc = t
                .replace('\\', "\\\\")
                .replace('\t', "\\t")
                .replace('\n', "\\n")
                .replace('\r', "\\r");
            writeln!(out, "{i}\t{esc}\t{c}")?;
        }
        Ok(())
    }
}

/// Count tokens over the training documents and keep those seen at least
/// `min_count` times, ordered by descending count then lexically.
pub fn build_vocab<'a, I>(train: I, unit: Unit, min_count: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut counts: HashMap<&'a str, u64> = HashMap::new();
    for doc in train {
        for t in doc {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count.max(1) as u64 && !RESERVED.contains(t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_entries(
        unit,
        kept.into_iter().map(|(t, c)| (t.to_string(), c)).collect(),
    )
    .expect("counted tokens are unique")
}

/// One JSONL line before context validation.
#[derive(Clone, Debug, Deserialize, PartialEq)]
pub struct Record {
    #[serde(default)]
    pub context: BTreeMap<String, Json>,
    pub text: String,
    #[serde(default)]
    pub label: Option<String>,
}

/// A JSONL document with a validated context, not yet tokenized.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDocument {
    pub text: String,
    pub context: ContextValue,
    pub label: Option<String>,
}

/// Read `{"context": {...}, "text": "..."}` lines. In lenient mode malformed
/// lines are skipped and reported as warnings instead of failing the read.
pub fn read_records(path: &Path, lenient: bool) -> Result<(Vec<Record>, Vec<String>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Record>(&line) {
            Ok(r) => records.push(r),
            Err(e) => {
                let err = Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: e.to_string(),
                };
                if lenient {
                    warnings.push(err.to_string());
                } else {
                    return Err(err);
                }
            }
        }
    }
    Ok((records, warnings))
}

/// Read a JSONL corpus and validate each context against `schema`.
pub fn load_jsonl(
    path: &Path,
    schema: &ContextSchema,
    lenient: bool,
) -> Result<(Vec<RawDocument>, Vec<String>)> {
    let (records, mut warnings) = read_records(path, lenient)?;
    let mut docs = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        match schema.value_from_json(&r.context) {
            Ok(context) => docs.push(RawDocument {
                text: r.text,
                context,
                label: r.label,
            }),
            Err(e) if lenient => warnings.push(format!("{}: record {}: {e}", path.display(), i + 1)),
            Err(e) => return Err(e),
        }
    }
    Ok((docs, warnings))
}

/// Tokenized document, framed `<s> … </s>`.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub text: String,
    pub tokens: Vec<usize>,
    pub context: ContextValue,
    pub label: Option<String>,
}

impl Document {
    /// Number of predicted positions (everything after `<s>`).
    pub fn predicted(&self) -> usize {
        self.tokens.len().saturating_sub(1)
    }
}

/// Tokenize raw documents against a fixed vocabulary. Documents that are empty
/// after normalization are skipped; the count of skipped documents is returned.
pub fn tokenize(
    raw: &[RawDocument],
    vocab: &Vocabulary,
    cap: usize,
) -> (Vec<Document>, usize) {
    let mut out = Vec::with_capacity(raw.len());
    let mut skipped = 0;
    for r in raw {
        match preprocess(&r.text, vocab.unit(), cap) {
            Some(toks) => out.push(Document {
                text: r.text.clone(),
                tokens: vocab.frame(&toks),
                context: r.context.clone(),
                label: r.label.clone(),
            }),
            None => skipped += 1,
        }
    }
    (out, skipped)
}

/// Preprocessing options.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub unit: Unit,
    /// Truncation cap in tokens; 0 disables truncation.
    pub max_tokens: usize,
    pub min_count: usize,
    pub min_category_count: usize,
    pub context: Vec<(String, DeclaredKind)>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            unit: Unit::Word,
            max_tokens: 200,
            min_count: 1,
            min_category_count: 1,
            context: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
    pub schema: ContextSchema,
    pub vocab: Vocabulary,
    /// Target-token counts over the training split, indexed by id.
    pub unigram: Vec<u64>,
}

impl Corpus {
    /// Fit schema and vocabulary on `train`, then tokenize every split.
    pub fn from_records(
        train: &[Record],
        dev: &[Record],
        test: &[Record],
        cfg: &DataConfig,
    ) -> Result<Corpus> {
        if train.is_empty() {
            return Err(Error::Argument("training split is empty".into()));
        }
        let contexts: Vec<BTreeMap<String, Json>> =
            train.iter().map(|r| r.context.clone()).collect();
        let schema = ContextSchema::fit(&cfg.context, &contexts, cfg.min_category_count)?;
        let to_raw = |recs: &[Record]| -> Result<Vec<RawDocument>> {
            recs.iter()
                .map(|r| {
                    Ok(RawDocument {
                        text: r.text.clone(),
                        context: schema.value_from_json(&r.context)?,
                        label: r.label.clone(),
                    })
                })
                .collect()
        };
        let train_raw = to_raw(train)?;
        let token_lists: Vec<Vec<String>> = train_raw
            .iter()
            .filter_map(|r| preprocess(&r.text, cfg.unit, cfg.max_tokens))
            .collect();
        let vocab = build_vocab(token_lists.iter().map(Vec::as_slice), cfg.unit, cfg.min_count);
        let (train_docs, _) = tokenize(&train_raw, &vocab, cfg.max_tokens);
        let (dev_docs, _) = tokenize(&to_raw(dev)?, &vocab, cfg.max_tokens);
        let (test_docs, _) = tokenize(&to_raw(test)?, &vocab, cfg.max_tokens);
        Ok(Corpus::new(train_docs, dev_docs, test_docs, schema, vocab))
    }

    pub fn new(
        train: Vec<Document>,
        dev: Vec<Document>,
        test: Vec<Document>,
        schema: ContextSchema,
        vocab: Vocabulary,
    ) -> Corpus {
        let unigram = unigram_counts(&train, vocab.len());
        Corpus {
            train,
            dev,
            test,
            schema,
            vocab,
            unigram,
        }
    }
}

/// Count every predicted token (position ≥ 1) in `docs`.
pub fn unigram_counts(docs: &[Document], vocab_size: usize) -> Vec<u64> {
    let mut counts = vec![0u64; vocab_size];
    for d in docs {
        for &t in &d.tokens[1..] {
            counts[t] += 1;
        }
    }
    counts
}

/// Right-padded group of documents with a loss mask over target positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Indices into the document slice the batch was built from.
    pub indices: Vec<usize>,
    /// `tokens[b]` is padded with [`PAD`] to the longest sequence in the batch.
    pub tokens: Vec<Vec<usize>>,
    /// `mask[b][t]` is true when target position `t + 1` is a real token.
    pub mask: Vec<Vec<bool>>,
}

impl Batch {
    /// Unpadded length of sequence `b`.
    pub fn length(&self, b: usize) -> usize {
        self.mask[b].iter().filter(|m| **m).count() + 1
    }

    pub fn target_count(&self) -> usize {
        self.mask.iter().flatten().filter(|m| **m).count()
    }
}

/// Length-bucketed batches in a seed-determined order. Documents are shuffled,
/// stably sorted by length, cut into batches, and the batch order shuffled.
pub fn make_batches(docs: &[Document], batch_size: usize, seed: u64, epoch: u64) -> Vec<Batch> {
    let batch_size = batch_size.max(1);
    let mut rng = rng::substream(seed, rng::BATCHING, epoch);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| docs[i].tokens.len());
    let mut batches: Vec<Batch> = order
        .chunks(batch_size)
        .map(|idx| {
            let width = idx.iter().map(|&i| docs[i].tokens.len()).max().unwrap_or(0);
            let tokens = idx
                .iter()
                .map(|&i| {
                    let mut t = docs[i].tokens.clone();
                    t.resize(width, PAD);
                    t
                })
                .collect();
            let mask = idx
                .iter()
                .map(|&i| (1..width).map(|p| p < docs[i].tokens.len()).collect())
                .collect();
            Batch {
                indices: idx.to_vec(),
                tokens,
                mask,
            }
        })
        .collect();
    batches.shuffle(&mut rng);
    batches
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn doc(len: usize) -> Document {
        let mut tokens = vec![BOS];
        tokens.extend(std::iter::repeat_n(4, len.saturating_sub(2)));
        tokens.push(EOS);
        Document {
            text: String::new(),
            tokens,
            context: ContextValue::empty(),
            label: None,
        }
    }

    #[test]
    fn word_preprocessing() {
        assert_eq!(
            preprocess("Hello, World!", Unit::Word, 0).unwrap(),
            strs(&["hello", "world"])
        );
        assert_eq!(
            preprocess("Don't stop -- state-of-the-art 'quoted'", Unit::Word, 0).unwrap(),
            strs(&["don't", "stop", "state-of-the-art", "quoted"])
        );
        assert_eq!(preprocess("?!...", Unit::Word, 0), None);
    }

    #[test]
    fn char_preprocessing_and_truncation() {
        assert_eq!(preprocess("aBc", Unit::Character, 0).unwrap(), strs(&["a", "b", "c"]));
        let long: String = (0..300).map(|i| format!("w{i} ")).collect();
        let toks = preprocess(&long, Unit::Word, 200).unwrap();
        assert_eq!(toks.len(), 200);
        assert_eq!(toks[199], "w199");
    }

    #[test]
    fn vocab_min_count() {
        let docs = [strs(&["a", "a", "b"])];
        let v = build_vocab(docs.iter().map(Vec::as_slice), Unit::Word, 1);
        assert_eq!(&v.tokens()[4..], &strs(&["a", "b"])[..]);
        assert_eq!(v.count(4), 2);
        let v = build_vocab(docs.iter().map(Vec::as_slice), Unit::Word, 2);
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.token(UNK).unwrap(), "<unk>");
        assert!(matches!(v.token(99), Err(Error::Vocab { .. })));
    }

    #[test]
    fn vocab_dump_format() {
        let v = Vocabulary::from_entries(Unit::Character, vec![("\t".into(), 3)]).unwrap();
        let mut buf = Vec::new();
        v.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("0\t<pad>\t0\n"));
        assert!(text.ends_with("4\t\\t\t3\n"));
    }

    #[test]
    fn jsonl_parsing() {
        let schema = ContextSchema::new(vec![crate::context::ContextVariable::categorical(
            "stars",
            strs(&["<other>", "5"]),
        )])
        .unwrap();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"context":{{"stars":5}},"text":"great"}}"#).unwrap();
        let (docs, warn) = load_jsonl(f.path(), &schema, false).unwrap();
        assert_eq!(docs.len(), 1);
        assert!(warn.is_empty());
        assert_eq!(docs[0].context.entries()[0], crate::context::ContextEntry::Category(1));

        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"context":{{"stars":5}}}}"#).unwrap();
        match load_jsonl(f.path(), &schema, false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }

        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"context":{{"stars":1}},"text":"a"}}"#).unwrap();
        writeln!(f, "not json").unwrap();
        writeln!(f, r#"{{"context":{{}},"text":"b"}}"#).unwrap();
        let (docs, warn) = load_jsonl(f.path(), &schema, true).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(warn.len(), 1);
        assert!(warn[0].contains(":2:"), "{}", warn[0]);

        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"context":{{"city":"x"}},"text":"a"}}"#).unwrap();
        assert!(matches!(
            load_jsonl(f.path(), &schema, false),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn batching() {
        let one = make_batches(&[doc(4)], 8, 1, 0);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].indices, vec![0]);

        let docs = vec![doc(3), doc(9), doc(3)];
        let b = make_batches(&docs, 2, 5, 0);
        assert_eq!(b.len(), 2);
        let pair = b.iter().find(|x| x.indices.len() == 2).unwrap();
        let mut idx = pair.indices.clone();
        idx.sort();
        assert_eq!(idx, vec![0, 2]);
        assert_eq!(b, make_batches(&docs, 2, 5, 0));
    }

    #[test]
    fn padding_and_mask() {
        let docs = vec![doc(3), doc(5)];
        let b = &make_batches(&docs, 2, 0, 0)[0];
        for (row, &i) in b.indices.iter().enumerate() {
            assert_eq!(b.tokens[row].len(), 5);
            assert_eq!(b.length(row), docs[i].tokens.len());
        }
        assert_eq!(b.target_count(), 2 + 4);
    }

    #[test]
    fn unigram_sums_to_predicted_tokens() {
        let docs = vec![doc(3), doc(5)];
        let u = unigram_counts(&docs, 5);
        assert_eq!(u.iter().sum::<u64>(), 6);
        assert_eq!(u[BOS], 0);
        assert_eq!(u[EOS], 2);
    }
}
