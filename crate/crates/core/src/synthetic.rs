//! Planted dynamic topic corpora for tests, demos and smoke runs.
//!
//! Every topic owns a block of words shared by all slices, whose weights
//! drift smoothly over time, plus a block of words that only appear in one
//! slice. A small background block is shared by every topic. Each document
//! has one dominant topic, used as its label.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::corpus::{RawDocument, Timestamp};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_slices: usize,
    pub num_topics: usize,
    pub shared_per_topic: usize,
    pub slice_per_topic: usize,
    pub background: usize,
    pub docs_per_slice: usize,
    pub doc_len: (usize, usize),
    /// Probability that a token comes from the dominant topic.
    pub dominance: f64,
    /// Probability that a topic token comes from its shared block.
    pub shared_share: f64,
    pub background_share: f64,
    pub first_year: i64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_slices: 4,
            num_topics: 5,
            shared_per_topic: 30,
            slice_per_topic: 6,
            background: 30,
            docs_per_slice: 150,
            doc_len: (40, 60),
            dominance: 0.85,
            shared_share: 0.7,
            background_share: 0.05,
            first_year: 2001,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub documents: Vec<RawDocument>,
    /// Dominant topic of each document.
    pub dominant: Vec<usize>,
    /// Shared words of each topic.
    pub shared_words: Vec<Vec<String>>,
    /// Slice-only words, indexed `[slice][topic]`.
    pub slice_words: Vec<Vec<Vec<String>>>,
    pub background_words: Vec<String>,
}

impl SyntheticCorpus {
    /// All planted words of topic `k` that can occur at slice `t`.
    pub fn topic_words(&self, t: usize, k: usize) -> Vec<String> {
        self.shared_words[k].iter().chain(&self.slice_words[t][k]).cloned().collect()
    }
}

fn letters(mut n: usize, width: usize) -> String {
    let mut out = vec![b'a'; width];
    for slot in out.iter_mut().rev() {
        *slot = b'a' + (n % 26) as u8;
        n /= 26;
    }
    String::from_utf8(out).expect("ascii")
}

pub fn topic_label(k: usize) -> String {
    format!("topic_{k}")
}

/// Per-word weights of a shared block at slice `t`; a smooth drift.
fn shared_weights(n: usize, t: usize, num_slices: usize) -> Vec<f64> {
    let phase = if num_slices > 1 { t as f64 / (num_slices - 1) as f64 } else { 0.0 };
    (0..n)
        .map(|j| {
            let pos = j as f64 / n.max(1) as f64;
            (1.5 * (std::f64::consts::PI * (pos + phase)).sin()).exp()
        })
        .collect()
}

fn pick(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if cfg.num_slices == 0 || cfg.num_topics == 0 || cfg.docs_per_slice == 0 {
        return Err(Error::InvalidInput("synthetic corpus needs slices, topics and documents".into()));
    }
    if cfg.shared_per_topic + cfg.slice_per_topic == 0 || cfg.doc_len.0 == 0 || cfg.doc_len.0 > cfg.doc_len.1 {
        return Err(Error::InvalidInput("synthetic corpus needs topic words and a valid length range".into()));
    }
    for p in [cfg.dominance, cfg.shared_share, cfg.background_share] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
        }
    }
    let shared_words: Vec<Vec<String>> = (0..cfg.num_topics)
        .map(|k| (0..cfg.shared_per_topic).map(|j| format!("sh{}{}", letters(k, 2), letters(j, 2))).collect())
        .collect();
    let slice_words: Vec<Vec<Vec<String>>> = (0..cfg.num_slices)
        .map(|t| {
            (0..cfg.num_topics)
                .map(|k| {
                    (0..cfg.slice_per_topic)
                        .map(|j| format!("sl{}{}{}", letters(t, 2), letters(k, 2), letters(j, 2)))
                        .collect()
                })
                .collect()
        })
        .collect();
    let background_words: Vec<String> = (0..cfg.background).map(|j| format!("bg{}", letters(j, 3))).collect();

    let mut rng = stream(cfg.seed, Stream::Synthetic);
    let minor = Gamma::new(0.3, 1.0).expect("valid gamma");
    let mut documents = Vec::with_capacity(cfg.num_slices * cfg.docs_per_slice);
    let mut dominant = Vec::with_capacity(documents.capacity());
    for t in 0..cfg.num_slices {
        let weights = shared_weights(cfg.shared_per_topic, t, cfg.num_slices);
        for d in 0..cfg.docs_per_slice {
            let main = (d + t) % cfg.num_topics;
            let mut mix: Vec<f64> = (0..cfg.num_topics).map(|_| minor.sample(&mut rng) + 1e-12).collect();
            mix[main] = 0.0;
            let rest: f64 = mix.iter().sum();
            for m in mix.iter_mut() {
                *m *= (1.0 - cfg.dominance) / rest;
            }
            mix[main] = cfg.dominance;

            let len = rng.random_range(cfg.doc_len.0..=cfg.doc_len.1);
            let mut tokens = Vec::with_capacity(len);
            for _ in 0..len {
                if cfg.background > 0 && rng.random::<f64>() < cfg.background_share {
                    tokens.push(background_words[rng.random_range(0..cfg.background)].as_str());
                    continue;
                }
                let k = pick(&mut rng, &mix);
                let use_shared = cfg.slice_per_topic == 0
                    || (cfg.shared_per_topic > 0 && rng.random::<f64>() < cfg.shared_share);
                if use_shared {
                    tokens.push(shared_words[k][pick(&mut rng, &weights)].as_str());
                } else {
                    tokens.push(slice_words[t][k][rng.random_range(0..cfg.slice_per_topic)].as_str());
                }
            }
            documents.push(RawDocument {
                text: tokens.join(" "),
                timestamp: Timestamp::Int(cfg.first_year + t as i64),
                label: Some(topic_label(main)),
            });
            dominant.push(main);
        }
    }
    Ok(SyntheticCorpus {
        documents,
        dominant,
        shared_words,
        slice_words,
        background_words,
    })
}
