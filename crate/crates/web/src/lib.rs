//! Browser demo. Two interactive pieces:
//!
//! * a topic-word explorer: topics and words as points in the plane, with
//!   the per-word softmax over topics recomputed as topics move or the
//!   distance scale changes;
//! * a training session on a small planted corpus that can be stepped a
//!   few epochs at a time, reporting losses, diversity, top words and the
//!   unassociated word sets.
//!
//! The logic lives in plain Rust functions returning JSON so it can be
//! tested natively; the `#[wasm_bindgen]` layer only converts errors.

use cfdtm_core::corpus::{build_corpus, CorpusOptions, TimeSlicedCorpus};
use cfdtm_core::evaluation::{topic_diversity, top_words_per_slice};
use cfdtm_core::model::topic_word_distribution;
use cfdtm_core::synthetic::{generate, SyntheticConfig};
use cfdtm_core::trainer::{export_word_evolution, train_state, EpochLog, ModelState, TrainConfig};
use cfdtm_core::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("demo values serialize")
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

// ---------------------------------------------------------------- explorer

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaView {
    /// `beta[k][i]`: weight of word `i` under topic `k`; columns sum to 1.
    pub beta: Vec<Vec<f64>>,
    /// Topic owning each word's largest weight.
    pub winner: Vec<usize>,
}

fn points(flat: &[f64], what: &str) -> Result<Array2<f64>> {
    if flat.is_empty() || !flat.len().is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("{what} must be a non-empty list of x, y pairs")));
    }
    Array2::from_shape_vec((flat.len() / 2, 2), flat.to_vec()).map_err(|e| Error::Dimension(e.to_string()))
}

/// `topics` and `words` are flat `[x0, y0, x1, y1, ...]` coordinates.
pub fn beta_view(topics: &[f64], words: &[f64], pi: f64) -> Result<BetaView> {
    let phi = points(topics, "topics")?;
    let w = points(words, "words")?;
    let dist = topic_word_distribution(phi.view(), w.view(), pi)?;
    let winner = dist
        .beta
        .columns()
        .into_iter()
        .map(|col| {
            col.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                .0
        })
        .collect();
    Ok(BetaView {
        beta: dist.beta.rows().into_iter().map(|r| r.to_vec()).collect(),
        winner,
    })
}

#[wasm_bindgen(js_name = betaView)]
pub fn beta_view_js(topics: &[f64], words: &[f64], pi: f64) -> std::result::Result<String, JsError> {
    beta_view(topics, words, pi).map(|v| to_json(&v)).map_err(js)
}

// ---------------------------------------------------------------- session

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionOptions {
    pub seed: u64,
    pub topics: usize,
    pub slices: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub no_negative: bool,
    pub no_uwe: bool,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            seed: 0,
            topics: 4,
            slices: 3,
            lambda: 1.0,
            learning_rate: 0.005,
            no_negative: false,
            no_uwe: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub epoch: usize,
    pub slices: Vec<String>,
    pub log: Vec<EpochLog>,
    pub td: Vec<f64>,
    /// `[slice][topic]` top ten words.
    pub top_words: Vec<Vec<Vec<String>>>,
    pub unassociated: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evolution {
    pub topic: usize,
    pub slices: Vec<String>,
    pub words: Vec<String>,
    /// `values[word][slice]`.
    pub values: Vec<Vec<f64>>,
}

pub struct DemoSession {
    corpus: TimeSlicedCorpus,
    state: ModelState,
    log: Vec<EpochLog>,
}

impl DemoSession {
    pub fn new(opts: &SessionOptions) -> Result<Self> {
        if opts.topics < 2 || opts.slices == 0 {
            return Err(Error::InvalidInput("the demo needs at least two topics and one slice".into()));
        }
        let syn = generate(&SyntheticConfig {
            num_slices: opts.slices,
            num_topics: opts.topics,
            shared_per_topic: 12,
            slice_per_topic: 3,
            background: 10,
            docs_per_slice: 60,
            doc_len: (20, 35),
            seed: opts.seed,
            ..Default::default()
        })?;
        let corpus = build_corpus(&syn.documents, &CorpusOptions::default())?;
        let mut config = TrainConfig {
            num_topics: opts.topics,
            epochs: 0,
            learning_rate: opts.learning_rate,
            batch_size: 30,
            seed: opts.seed,
            hidden: 32,
            embedding_dim: 8,
            ..Default::default()
        };
        config.loss.lambda_t = vec![opts.lambda];
        config.loss.enable_negative = !opts.no_negative;
        config.loss.enable_uwe = !opts.no_uwe;
        config.validate(corpus.num_slices())?;
        let state = ModelState::init(&corpus, &config, None)?;
        Ok(DemoSession {
            corpus,
            state,
            log: Vec::new(),
        })
    }

    pub fn step(&mut self, epochs: usize) -> Result<Snapshot> {
        self.state.config.epochs = self.state.epoch + epochs;
        let logs = train_state(&self.corpus, &mut self.state, |_, _| Ok(()))?;
        self.log.extend(logs);
        self.snapshot()
    }

    pub fn snapshot(&self) -> Result<Snapshot> {
        let vocab = self.corpus.vocab();
        let top = top_words_per_slice(&self.state, 10)?;
        let td = top
            .iter()
            .zip(self.corpus.slices())
            .map(|(lists, slice)| topic_diversity(lists, &slice.vocab))
            .collect();
        let names = |ids: &[usize]| ids.iter().map(|&w| vocab.token(w).to_string()).collect::<Vec<_>>();
        Ok(Snapshot {
            epoch: self.state.epoch,
            slices: self.corpus.slices().iter().map(|s| s.key.clone()).collect(),
            log: self.log.clone(),
            td,
            top_words: top.iter().map(|lists| lists.iter().map(|l| names(l)).collect()).collect(),
            unassociated: self.state.unassociated.iter().map(|u| names(u)).collect(),
        })
    }

    /// Weights of the topic's leading words in every slice, pooled over
    /// slices so words that rise or fade are included.
    pub fn evolution(&self, topic: usize, per_slice: usize) -> Result<Evolution> {
        if topic >= self.state.num_topics() {
            return Err(Error::InvalidInput(format!("topic {topic} out of range")));
        }
        let top = top_words_per_slice(&self.state, per_slice)?;
        let mut ids: Vec<usize> = Vec::new();
        for lists in &top {
            for &w in &lists[topic] {
                if !ids.contains(&w) {
                    ids.push(w);
                }
            }
        }
        let table = export_word_evolution(&self.state, &ids, topic)?;
        Ok(Evolution {
            topic,
            slices: self.corpus.slices().iter().map(|s| s.key.clone()).collect(),
            words: ids.iter().map(|&w| self.corpus.vocab().token(w).to_string()).collect(),
            values: table.rows().into_iter().map(|r| r.to_vec()).collect(),
        })
    }
}

#[wasm_bindgen]
pub struct Session(DemoSession);

#[wasm_bindgen]
impl Session {
    /// `options` is a JSON object; missing fields take their defaults.
    #[wasm_bindgen(constructor)]
    pub fn new(options: &str) -> std::result::Result<Session, JsError> {
        let opts: SessionOptions = if options.trim().is_empty() {
            SessionOptions::default()
        } else {
            serde_json::from_str(options).map_err(|e| JsError::new(&e.to_string()))?
        };
        DemoSession::new(&opts).map(Session).map_err(js)
    }

    pub fn step(&mut self, epochs: usize) -> std::result::Result<String, JsError> {
        self.0.step(epochs).map(|s| to_json(&s)).map_err(js)
    }

    pub fn snapshot(&self) -> std::result::Result<String, JsError> {
        self.0.snapshot().map(|s| to_json(&s)).map_err(js)
    }

    pub fn evolution(&self, topic: usize, per_slice: usize) -> std::result::Result<String, JsError> {
        self.0.evolution(topic, per_slice).map(|e| to_json(&e)).map_err(js)
    }
}
