//! Dataset ingestion, vocabulary construction, splitting, sequence assembly,
//! batching, and a synthetic-corpus generator for desk-scale experiments.
//!
//! The on-disk dataset format is JSON lines, UTF-8, one object per line with
//! keys `user`, `item`, `rating`, `explanation`, `feature`.

mod batch;
mod encode;
mod split;
mod synth;

pub use batch::epoch_batches;
pub use encode::{decode_explanation, encode_sample, EncodedSample};
pub use split::{split, Split, SplitSpec};
pub use synth::synth_generate;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{count} malformed record(s):\n{summary}")]
    MalformedRecords { count: usize, summary: String },
    #[error("no records to build a vocabulary from")]
    NoRecords,
    #[error("unknown user id '{0}'")]
    UnknownUser(String),
    #[error("unknown item id '{0}'")]
    UnknownItem(String),
    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),
    #[error("record {index}: user '{user}' or item '{item}' has no records")]
    MissingCoverage {
        index: usize,
        user: String,
        item: String,
    },
    #[error("samples must share one encoded length, found both {0} and {1}")]
    MixedLengths(usize, usize),
}

/// One (user, item, rating, explanation, feature) tuple — the dataset atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user: String,
    pub item: String,
    pub rating: f64,
    /// Explanation words, lowercased and tokenized.
    pub explanation: Vec<String>,
    /// Item feature named by the explanation; a single word or short phrase.
    pub feature: String,
}

impl InteractionRecord {
    /// Feature words after the same tokenization as explanations.
    pub fn feature_words(&self) -> Vec<String> {
        tokenize(&self.feature)
    }
}

/// Lowercase, split on whitespace, strip leading/trailing punctuation from
/// each token, drop tokens that end up empty.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Deserialize)]
struct RawRecord {
    user: String,
    item: String,
    rating: f64,
    explanation: String,
    feature: String,
}

/// Parse a JSON-lines dataset file. Malformed lines are collected and
/// reported together with their line numbers; any error aborts the load.
pub fn load_records(path: &Path) -> Result<Vec<InteractionRecord>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut errors: Vec<String> = Vec::new();
    let mut saw_line = false;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        saw_line = true;
        match parse_record_line(&line) {
            Ok(rec) => records.push(rec),
            Err(msg) => errors.push(format!("line {lineno}: {msg}")),
        }
    }
    if !errors.is_empty() {
        let shown = errors.iter().take(20).cloned().collect::<Vec<_>>().join("\n");
        return Err(CorpusError::MalformedRecords {
            count: errors.len(),
            summary: shown,
        });
    }
    if !saw_line {
        eprintln!("warning: dataset {} is empty", path.display());
    }
    Ok(records)
}

fn parse_record_line(line: &str) -> Result<InteractionRecord, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if !raw.rating.is_finite() {
        return Err(format!("rating {} is not finite", raw.rating));
    }
    let explanation = tokenize(&raw.explanation);
    if explanation.is_empty() {
        return Err("explanation has no words".to_string());
    }
    if tokenize(&raw.feature).is_empty() {
        return Err("feature is empty".to_string());
    }
    Ok(InteractionRecord {
        user: raw.user,
        item: raw.item,
        rating: raw.rating,
        explanation,
        feature: raw.feature.to_lowercase(),
    })
}

/// Write records back out as JSON lines (the canonical dataset format).
pub fn save_records(records: &[InteractionRecord], path: &Path) -> Result<(), CorpusError> {
    use std::io::Write;
    let mut file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    for rec in records {
        let line = serde_json::json!({
            "user": rec.user,
            "item": rec.item,
            "rating": rec.rating,
            "explanation": rec.explanation.join(" "),
            "feature": rec.feature,
        });
        writeln!(file, "{line}").map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

/// Word, user, and item index spaces. Words occupy a dense range ordered by
/// training-set frequency (ties lexicographic) with the four specials
/// appended after them; users and items get their own separate index spaces
/// and are never part of the word vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    users: Vec<String>,
    items: Vec<String>,
    #[serde(skip)]
    word_index: HashMap<String, usize>,
    #[serde(skip)]
    user_index: HashMap<String, usize>,
    #[serde(skip)]
    item_index: HashMap<String, usize>,
}

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
const SPECIALS: [&str; 4] = [BOS, EOS, PAD, UNK];

impl Vocabulary {
    fn rebuild_indices(&mut self) {
        self.word_index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        self.user_index = self
            .users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i))
            .collect();
        self.item_index = self
            .items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.clone(), i))
            .collect();
    }

    /// Total word-vocabulary size including the four specials.
    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn bos(&self) -> usize {
        self.words.len() - 4
    }

    pub fn eos(&self) -> usize {
        self.words.len() - 3
    }

    pub fn pad(&self) -> usize {
        self.words.len() - 2
    }

    pub fn unk(&self) -> usize {
        self.words.len() - 1
    }

    pub fn is_special(&self, idx: usize) -> bool {
        idx >= self.words.len() - 4
    }

    /// Encode a word, falling back to `<unk>` for out-of-vocabulary words.
    pub fn encode_word(&self, word: &str) -> usize {
        self.word_index.get(word).copied().unwrap_or_else(|| self.unk())
    }

    pub fn word(&self, idx: usize) -> &str {
        &self.words[idx]
    }

    pub fn user_idx(&self, user: &str) -> Result<usize, CorpusError> {
        self.user_index
            .get(user)
            .copied()
            .ok_or_else(|| CorpusError::UnknownUser(user.to_string()))
    }

    pub fn item_idx(&self, item: &str) -> Result<usize, CorpusError> {
        self.item_index
            .get(item)
            .copied()
            .ok_or_else(|| CorpusError::UnknownItem(item.to_string()))
    }

    pub fn user(&self, idx: usize) -> &str {
        &self.users[idx]
    }

    pub fn item(&self, idx: usize) -> &str {
        &self.items[idx]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        let mut v: Vocabulary = serde_json::from_str(s)?;
        v.rebuild_indices();
        Ok(v)
    }
}

/// Build the vocabulary from training records: the `cap` most frequent words
/// (explanation plus feature words), ties broken lexicographically, with the
/// specials appended after them. User and item ids are indexed in order of
/// first appearance.
pub fn build_vocab(records: &[InteractionRecord], cap: usize) -> Result<Vocabulary, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::NoRecords);
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for rec in records {
        for w in &rec.explanation {
            *counts.entry(w.clone()).or_insert(0) += 1;
        }
        for w in rec.feature_words() {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    let mut by_freq: Vec<(String, u64)> = counts.into_iter().collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    by_freq.truncate(cap);
    let mut words: Vec<String> = by_freq.into_iter().map(|(w, _)| w).collect();
    words.extend(SPECIALS.iter().map(|s| s.to_string()));

    let mut users = Vec::new();
    let mut items = Vec::new();
    let mut seen_users: HashMap<&str, ()> = HashMap::new();
    let mut seen_items: HashMap<&str, ()> = HashMap::new();
    for rec in records {
        if seen_users.insert(rec.user.as_str(), ()).is_none() {
            users.push(rec.user.clone());
        }
        if seen_items.insert(rec.item.as_str(), ()).is_none() {
            items.push(rec.item.clone());
        }
    }

    let mut vocab = Vocabulary {
        words,
        users,
        items,
        word_index: HashMap::new(),
        user_index: HashMap::new(),
        item_index: HashMap::new(),
    };
    vocab.rebuild_indices();
    Ok(vocab)
}
