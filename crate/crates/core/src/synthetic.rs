//! Small generated corpora with known context structure, used by the test
//! suites, the benches and for smoke-testing the CLI.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::data::Record;
use crate::rng;

const STREAM: &str = "synthetic";

fn record(class: &str, text: String) -> Record {
    let mut context = BTreeMap::new();
    context.insert("class".to_string(), json!(class));
    Record {
        context,
        text,
        label: Some(class.to_string()),
    }
}

fn random_word(r: &mut ChaCha8Rng, alphabet: &[char], len: usize) -> String {
    (0..len).map(|_| *alphabet.choose(r).unwrap()).collect()
}

/// Two classes, `a` and `b`, over a shared character alphabet. Class `a`
/// draws documents of 1..=`max_words` words from a fixed lexicon of
/// `lexicon` random words; class `b` uses the same lexicon spelled backwards.
/// Both classes therefore share one character unigram distribution while
/// their 5-gram statistics are disjoint.
#[derive(Clone, Debug)]
pub struct MirroredLexicon {
    pub alphabet: usize,
    pub lexicon: usize,
    pub word_len: usize,
    pub max_words: usize,
}

impl Default for MirroredLexicon {
    fn default() -> Self {
        MirroredLexicon {
            alphabet: 24,
            lexicon: 30,
            word_len: 5,
            max_words: 2,
        }
    }
}

impl MirroredLexicon {
    fn lexicon(&self, seed: u64) -> Vec<String> {
        let alphabet: Vec<char> = ('a'..='z').take(self.alphabet).collect();
        let mut r = rng::substream(seed, STREAM, 0);
        let mut seen = BTreeSet::new();
        let mut words = Vec::new();
        while words.len() < self.lexicon {
            let w = random_word(&mut r, &alphabet, self.word_len);
            let rev: String = w.chars().rev().collect();
            // keep the two lexicons disjoint
            if w == rev || seen.contains(&w) || seen.contains(&rev) {
                continue;
            }
            seen.insert(w.clone());
            seen.insert(rev);
            words.push(w);
        }
        words
    }

    /// `per_class` documents of each class, interleaved.
    pub fn generate(&self, per_class: usize, seed: u64, split: u64) -> Vec<Record> {
        let words = self.lexicon(seed);
        let mut r = rng::substream(seed, STREAM, 1 + split);
        let mut out = Vec::with_capacity(2 * per_class);
        for _ in 0..per_class {
            for class in ["a", "b"] {
                let n = r.random_range(1..=self.max_words);
                let doc: Vec<String> = (0..n)
                    .map(|_| {
                        let w = words.choose(&mut r).unwrap();
                        if class == "a" {
                            w.clone()
                        } else {
                            w.chars().rev().collect()
                        }
                    })
                    .collect();
                out.push(record(class, doc.join(" ")));
            }
        }
        out
    }
}

/// Two word-level topics. Each document draws `len` words i.i.d.: with
/// probability `topic_share` from its topic's own vocabulary (disjoint between
/// topics), otherwise from a shared pool of function words.
#[derive(Clone, Debug)]
pub struct TopicUnigrams {
    pub topic_words: usize,
    pub function_words: usize,
    pub topic_share: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for TopicUnigrams {
    fn default() -> Self {
        TopicUnigrams {
            topic_words: 12,
            function_words: 6,
            topic_share: 0.7,
            min_len: 3,
            max_len: 6,
        }
    }
}

impl TopicUnigrams {
    pub fn generate(&self, per_class: usize, seed: u64, split: u64) -> Vec<Record> {
        let topic = |t: &str| -> Vec<String> {
            (0..self.topic_words).map(|i| format!("{t}{i}")).collect()
        };
        let (ta, tb) = (topic("sport"), topic("money"));
        let shared: Vec<String> = (0..self.function_words).map(|i| format!("the{i}")).collect();
        let mut r = rng::substream(seed, STREAM, 100 + split);
        let mut out = Vec::with_capacity(2 * per_class);
        for _ in 0..per_class {
            for (class, own) in [("a", &ta), ("b", &tb)] {
                let n = r.random_range(self.min_len..=self.max_len);
                let doc: Vec<&str> = (0..n)
                    .map(|_| {
                        let pool = if r.random_bool(self.topic_share) { own } else { &shared };
                        pool.choose(&mut r).unwrap().as_str()
                    })
                    .collect();
                out.push(record(class, doc.join(" ")));
            }
        }
        out
    }
}

/// Two classes writing in disjoint alphabets: class `a` uses the first half
/// of `letters`, class `b` the second half. Documents are random strings of
/// 3..=`max_len` characters.
pub fn split_alphabet(letters: &str, per_class: usize, max_len: usize, seed: u64) -> Vec<Record> {
    let chars: Vec<char> = letters.chars().collect();
    let (a, b) = chars.split_at(chars.len() / 2);
    let mut r = rng::substream(seed, STREAM, 200);
    let mut out = Vec::with_capacity(2 * per_class);
    for _ in 0..per_class {
        for (class, alpha) in [("a", a), ("b", b)] {
            let n = r.random_range(3..=max_len.max(3));
            out.push(record(class, random_word(&mut r, alpha, n)));
        }
    }
    out
}

/// `copies` identical records of `sentence`, split evenly over two classes.
pub fn repeated_sentence(sentence: &str, copies: usize) -> Vec<Record> {
    (0..copies)
        .map(|i| record(if i % 2 == 0 { "a" } else { "b" }, sentence.to_string()))
        .collect()
}

/// Shuffle records deterministically.
pub fn shuffled(mut records: Vec<Record>, seed: u64) -> Vec<Record> {
    let mut r = rng::substream(seed, STREAM, 300);
    records.shuffle(&mut r);
    records
}
