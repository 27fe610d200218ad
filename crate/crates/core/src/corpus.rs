//! Document ingestion, preprocessing and the immutable time-sliced
//! bag-of-words corpus.
//!
//! Preprocessing per document: lowercase, punctuation to whitespace,
//! whitespace tokenization, then drop tokens containing digits, tokens
//! shorter than three characters, and stopwords. The global vocabulary is
//! the `max_vocab` most frequent surviving tokens (after a document
//! frequency floor), and each slice records the subset of vocabulary
//! indices that actually occur in its documents.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const BUNDLED_STOPWORDS: &str = include_str!("stopwords_en.txt");

/// Minimum token length kept by preprocessing, in characters.
pub const MIN_TOKEN_CHARS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Timestamp {
    Int(i64),
    Text(String),
}

impl Timestamp {
    pub fn key(&self) -> String {
        match self {
            Timestamp::Int(v) => v.to_string(),
            Timestamp::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub text: String,
    pub timestamp: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Reads one JSON object per line. Blank lines are skipped; a malformed
/// line aborts with its 1-based line number.
pub fn read_jsonl(path: &Path) -> Result<Vec<RawDocument>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

#[derive(Debug, Clone, Default)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    /// The bundled English list.
    pub fn english() -> Self {
        Self::from_text(BUNDLED_STOPWORDS)
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// One word per line (or any whitespace separation), case-folded.
    pub fn from_text(text: &str) -> Self {
        Stopwords(text.split_whitespace().map(str::to_lowercase).collect())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_text(&text))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for Stopwords {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Stopwords(iter.into_iter().map(|s| s.into().to_lowercase()).collect())
    }
}

pub fn preprocess_document(text: &str, stopwords: &Stopwords) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    cleaned
        .split_whitespace()
        .map(str::to_lowercase)
        .filter(|tok| !tok.chars().any(char::is_numeric))
        .filter(|tok| tok.chars().count() >= MIN_TOKEN_CHARS)
        .filter(|tok| !stopwords.contains(tok))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabularyIndex {
    tokens: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl VocabularyIndex {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if lookup.insert(tok.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(VocabularyIndex { tokens, lookup })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.lookup.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for tok in &self.tokens {
            hasher.update(tok.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    /// Sparse counts of the in-vocabulary tokens of `tokens`.
    pub fn vectorize<S: AsRef<str>>(&self, tokens: &[S]) -> BowDocument {
        let mut counts: HashMap<usize, u32> = HashMap::new();
        for tok in tokens {
            if let Some(id) = self.id(tok.as_ref()) {
                *counts.entry(id).or_default() += 1;
            }
        }
        BowDocument::from_counts(counts)
    }
}

/// A document as sparse word counts, sorted by word id, all counts >= 1.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BowDocument {
    entries: Vec<(usize, u32)>,
}

impl BowDocument {
    pub fn from_counts(counts: impl IntoIterator<Item = (usize, u32)>) -> Self {
        let mut merged: HashMap<usize, u32> = HashMap::new();
        for (w, c) in counts {
            if c > 0 {
                *merged.entry(w).or_default() += c;
            }
        }
        let mut entries: Vec<_> = merged.into_iter().collect();
        entries.sort_unstable();
        BowDocument { entries }
    }

    pub fn entries(&self) -> &[(usize, u32)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn to_dense(&self, vocab_size: usize) -> Vec<f64> {
        let mut v = vec![0.0; vocab_size];
        for &(w, c) in &self.entries {
            v[w] += c as f64;
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub key: String,
    pub docs: Vec<BowDocument>,
    /// Sorted vocabulary indices occurring in this slice.
    pub vocab: Vec<usize>,
    /// Per-document label, parallel to `docs`.
    pub labels: Vec<Option<String>>,
    /// Preprocessed token streams of the slice (before the vocabulary cap);
    /// reference corpus for coherence.
    pub reference: Vec<Vec<String>>,
}

impl Slice {
    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn has_labels(&self) -> bool {
        self.labels.iter().any(Option::is_some)
    }
}

/// How raw timestamps are grouped into ordered slices.
#[derive(Debug, Clone, PartialEq)]
pub enum SliceRule {
    /// One slice per distinct timestamp value. Slices are ordered
    /// numerically when every key parses as an integer, otherwise
    /// lexicographically.
    ByTimestamp,
    /// Explicit timestamp -> slice label map; slice order is the order in
    /// which labels first appear.
    Explicit(Vec<(String, String)>),
}

impl SliceRule {
    /// Mapping file: `timestamp slice_label` per line, whitespace separated.
    pub fn from_mapping_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(ts), Some(label), None) => pairs.push((ts.to_string(), label.to_string())),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: "expected `timestamp slice_label`".into(),
                    })
                }
            }
        }
        Ok(SliceRule::Explicit(pairs))
    }

    /// Ordered slice labels and the slice index for each document.
    fn assign(&self, docs: &[RawDocument]) -> Result<(Vec<String>, Vec<usize>)> {
        match self {
            SliceRule::ByTimestamp => {
                let keys: BTreeSet<String> = docs.iter().map(|d| d.timestamp.key()).collect();
                let mut keys: Vec<String> = keys.into_iter().collect();
                let numeric: Option<Vec<i64>> = keys.iter().map(|k| k.parse().ok()).collect();
                if let Some(nums) = numeric {
                    let mut paired: Vec<_> = nums.into_iter().zip(keys).collect();
                    paired.sort();
                    keys = paired.into_iter().map(|(_, k)| k).collect();
                }
                let index: HashMap<&str, usize> =
                    keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
                let assignment = docs.iter().map(|d| index[d.timestamp.key().as_str()]).collect();
                Ok((keys, assignment))
            }
            SliceRule::Explicit(pairs) => {
                let mut labels: Vec<String> = Vec::new();
                let mut label_index: HashMap<&str, usize> = HashMap::new();
                let mut ts_index: HashMap<&str, usize> = HashMap::new();
                for (ts, label) in pairs {
                    let next = labels.len();
                    let idx = *label_index.entry(label.as_str()).or_insert(next);
                    if idx == next {
                        labels.push(label.clone());
                    }
                    ts_index.insert(ts.as_str(), idx);
                }
                let assignment = docs
                    .iter()
                    .map(|d| {
                        let key = d.timestamp.key();
                        ts_index
                            .get(key.as_str())
                            .copied()
                            .ok_or(Error::UnmappedTimestamp(key))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((labels, assignment))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusOptions {
    pub max_vocab: usize,
    pub min_df: usize,
    pub stopwords: Stopwords,
    pub slicing: SliceRule,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            max_vocab: 10_000,
            min_df: 1,
            stopwords: Stopwords::english(),
            slicing: SliceRule::ByTimestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_docs: usize,
    pub average_length: f64,
    pub vocab_size: usize,
    pub num_slices: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSlicedCorpus {
    vocab: VocabularyIndex,
    slices: Vec<Slice>,
}

#[cfg(feature = "parallel")]
fn preprocess_all(docs: &[RawDocument], stopwords: &Stopwords) -> Vec<Vec<String>> {
    use rayon::prelude::*;
    docs.par_iter().map(|d| preprocess_document(&d.text, stopwords)).collect()
}

#[cfg(not(feature = "parallel"))]
fn preprocess_all(docs: &[RawDocument], stopwords: &Stopwords) -> Vec<Vec<String>> {
    docs.iter().map(|d| preprocess_document(&d.text, stopwords)).collect()
}

pub fn build_corpus(docs: &[RawDocument], options: &CorpusOptions) -> Result<TimeSlicedCorpus> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus("no input documents".into()));
    }
    if options.max_vocab == 0 {
        return Err(Error::InvalidInput("max_vocab must be at least 1".into()));
    }
    let (slice_keys, assignment) = options.slicing.assign(docs)?;
    let tokens = preprocess_all(docs, &options.stopwords);

    let mut freq: HashMap<&str, u64> = HashMap::new();
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in &tokens {
        let mut seen = HashSet::new();
        for tok in doc {
            *freq.entry(tok.as_str()).or_default() += 1;
            if seen.insert(tok.as_str()) {
                *df.entry(tok.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, u64)> = freq
        .into_iter()
        .filter(|(tok, _)| df[tok] >= options.min_df)
        .collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(options.max_vocab);
    let vocab = VocabularyIndex::new(ranked.into_iter().map(|(t, _)| t.to_string()).collect())?;

    let mut slices: Vec<Slice> = slice_keys
        .into_iter()
        .map(|key| Slice {
            key,
            docs: Vec::new(),
            vocab: Vec::new(),
            labels: Vec::new(),
            reference: Vec::new(),
        })
        .collect();
    let mut dropped = 0usize;
    for ((raw, toks), &s) in docs.iter().zip(tokens).zip(&assignment) {
        let bow = vocab.vectorize(&toks);
        let slice = &mut slices[s];
        if !toks.is_empty() {
            slice.reference.push(toks);
        }
        if bow.is_empty() {
            dropped += 1;
            continue;
        }
        slice.docs.push(bow);
        slice.labels.push(raw.label.clone());
    }
    if dropped > 0 {
        log::info!("dropped {dropped} documents with no in-vocabulary tokens");
    }
    let before = slices.len();
    slices.retain(|s| !s.docs.is_empty());
    if slices.len() < before {
        log::warn!("dropped {} slices left without documents", before - slices.len());
    }
    if slices.is_empty() {
        return Err(Error::EmptyCorpus("every document is empty after preprocessing".into()));
    }
    for slice in &mut slices {
        slice.vocab = occurring_words(&slice.docs);
    }
    Ok(TimeSlicedCorpus { vocab, slices })
}

fn occurring_words(docs: &[BowDocument]) -> Vec<usize> {
    let set: BTreeSet<usize> = docs.iter().flat_map(|d| d.entries().iter().map(|&(w, _)| w)).collect();
    set.into_iter().collect()
}

impl TimeSlicedCorpus {
    /// Assembles a corpus from already-vectorized slices, recomputing each
    /// slice vocabulary and validating the invariants.
    pub fn from_parts(vocab: VocabularyIndex, mut slices: Vec<Slice>) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::EmptyCorpus("no slices".into()));
        }
        for slice in &mut slices {
            if slice.labels.is_empty() {
                slice.labels = vec![None; slice.docs.len()];
            }
            if slice.labels.len() != slice.docs.len() {
                return Err(Error::Dimension(format!(
                    "slice {:?}: {} labels for {} documents",
                    slice.key,
                    slice.labels.len(),
                    slice.docs.len()
                )));
            }
            if slice.docs.iter().any(BowDocument::is_empty) {
                return Err(Error::InvalidInput(format!("slice {:?} has an empty document", slice.key)));
            }
            if let Some(&(w, _)) = slice
                .docs
                .iter()
                .flat_map(|d| d.entries().iter())
                .find(|&&(w, _)| w >= vocab.len())
            {
                return Err(Error::Dimension(format!("word id {w} outside vocabulary of {}", vocab.len())));
            }
            slice.vocab = occurring_words(&slice.docs);
        }
        Ok(TimeSlicedCorpus { vocab, slices })
    }

    pub fn vocab(&self) -> &VocabularyIndex {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn num_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    pub fn slice(&self, t: usize) -> Result<&Slice> {
        self.slices.get(t).ok_or(Error::SliceOutOfRange {
            index: t,
            count: self.slices.len(),
        })
    }

    pub fn slice_vocabulary(&self, t: usize) -> Result<&[usize]> {
        Ok(&self.slice(t)?.vocab)
    }

    pub fn num_docs(&self) -> usize {
        self.slices.iter().map(Slice::num_docs).sum()
    }

    /// All documents as (slice index, document) in slice order.
    pub fn documents(&self) -> impl Iterator<Item = (usize, &BowDocument)> {
        self.slices
            .iter()
            .enumerate()
            .flat_map(|(t, s)| s.docs.iter().map(move |d| (t, d)))
    }

    pub fn labels(&self) -> Vec<Option<String>> {
        self.slices.iter().flat_map(|s| s.labels.iter().cloned()).collect()
    }

    pub fn stats(&self) -> CorpusStats {
        let num_docs = self.num_docs();
        let tokens: u64 = self.documents().map(|(_, d)| d.total()).sum();
        CorpusStats {
            num_docs,
            average_length: tokens as f64 / num_docs.max(1) as f64,
            vocab_size: self.vocab_size(),
            num_slices: self.num_slices(),
        }
    }

    pub fn vocab_hash(&self) -> String {
        self.vocab.hash()
    }

    /// SHA-256 over the serialized bundle files, in a fixed order.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, contents) in self.bundle_files() {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            hasher.update(contents.as_bytes());
        }
        hex::encode(hasher.finalize())
    }

    fn bundle_files(&self) -> Vec<(String, String)> {
        let mut files = Vec::new();
        let mut vocab = String::new();
        for tok in self.vocab.tokens() {
            vocab.push_str(tok);
            vocab.push('\n');
        }
        files.push(("vocab.txt".to_string(), vocab));

        let mut index = String::from("slice\tkey\tnum_docs\n");
        for (t, s) in self.slices.iter().enumerate() {
            let _ = writeln!(index, "{t}\t{}\t{}", s.key, s.num_docs());
        }
        files.push(("slices.tsv".to_string(), index));

        for (t, s) in self.slices.iter().enumerate() {
            let stem = slice_stem(t);
            files.push((format!("{stem}.ndocs"), format!("{}\n", s.num_docs())));

            let mut counts = String::new();
            for (d, doc) in s.docs.iter().enumerate() {
                for &(w, c) in doc.entries() {
                    let _ = writeln!(counts, "{d} {w} {c}");
                }
            }
            files.push((format!("{stem}.counts"), counts));

            let mut vocab = String::new();
            for w in &s.vocab {
                let _ = writeln!(vocab, "{w}");
            }
            files.push((format!("{stem}.vocab"), vocab));

            if s.has_labels() {
                let mut labels = String::new();
                for l in &s.labels {
                    labels.push_str(l.as_deref().unwrap_or(""));
                    labels.push('\n');
                }
                files.push((format!("{stem}.labels"), labels));
            }

            let mut reference = String::new();
            for doc in &s.reference {
                reference.push_str(&doc.join(" "));
                reference.push('\n');
            }
            files.push((format!("{stem}.tokens"), reference));
        }
        files
    }

    /// Writes the bundle directory:
    /// `vocab.txt`, `slices.tsv`, and per slice `slice_NNN.{ndocs,counts,vocab,tokens}`
    /// plus `slice_NNN.labels` when labels exist. Count files hold
    /// `doc_id word_id count` triples.
    pub fn write_bundle(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, contents) in self.bundle_files() {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn read_bundle(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
        };
        let parse_err = |name: &str, line: usize, message: String| Error::Parse {
            path: dir.join(name),
            line,
            message,
        };

        let vocab = VocabularyIndex::new(read("vocab.txt")?.lines().map(str::to_string).collect())?;
        let index = read("slices.tsv")?;
        let mut slices = Vec::new();
        for (i, line) in index.lines().enumerate().skip(1) {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(parse_err("slices.tsv", i + 1, "expected 3 columns".into()));
            }
            let t = slices.len();
            let stem = slice_stem(t);
            let num_docs: usize = cols[2]
                .parse()
                .map_err(|_| parse_err("slices.tsv", i + 1, "bad document count".into()))?;

            let counts_name = format!("{stem}.counts");
            let mut triples: Vec<Vec<(usize, u32)>> = vec![Vec::new(); num_docs];
            for (j, row) in read(&counts_name)?.lines().enumerate() {
                let nums: Vec<&str> = row.split_whitespace().collect();
                let parsed = match nums.as_slice() {
                    [d, w, c] => d.parse::<usize>().ok().zip(w.parse::<usize>().ok()).zip(c.parse::<u32>().ok()),
                    _ => None,
                };
                let ((d, w), c) = parsed
                    .ok_or_else(|| parse_err(&counts_name, j + 1, "expected `doc_id word_id count`".into()))?;
                if d >= num_docs {
                    return Err(parse_err(&counts_name, j + 1, format!("doc id {d} >= {num_docs}")));
                }
                triples[d].push((w, c));
            }
            let docs: Vec<BowDocument> = triples.into_iter().map(BowDocument::from_counts).collect();

            let labels_path = dir.join(format!("{stem}.labels"));
            let labels = if labels_path.exists() {
                let text = fs::read_to_string(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
                let mut labels: Vec<Option<String>> =
                    text.lines().map(|l| (!l.is_empty()).then(|| l.to_string())).collect();
                labels.resize(num_docs, None);
                labels
            } else {
                vec![None; num_docs]
            };
            let reference = read(&format!("{stem}.tokens"))?
                .lines()
                .map(|l| l.split_whitespace().map(str::to_string).collect())
                .collect();
            slices.push(Slice {
                key: cols[1].to_string(),
                docs,
                vocab: Vec::new(),
                labels,
                reference,
            });
        }
        let corpus = Self::from_parts(vocab, slices)?;
        for (t, s) in corpus.slices.iter().enumerate() {
            let stored: Vec<usize> = read(&format!("{}.vocab", slice_stem(t)))?
                .lines()
                .filter_map(|l| l.trim().parse().ok())
                .collect();
            if stored != s.vocab {
                return Err(Error::InvalidInput(format!(
                    "slice {t}: stored vocabulary disagrees with its documents"
                )));
            }
        }
        Ok(corpus)
    }
}

fn slice_stem(t: usize) -> String {
    format!("slice_{t:03}")
}
