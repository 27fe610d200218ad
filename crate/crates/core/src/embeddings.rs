//! Word and topic embeddings.
//!
//! Word embeddings are one `|V| x D` matrix shared by every slice (row `i`
//! is the vector of word `i`). Topic embeddings are a `T x K x D` tensor.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::VocabularyIndex;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Standard deviation of the Gaussian used for fresh embedding entries.
pub const INIT_STD: f64 = 0.02;

/// Default embedding width, matching common 200-d pretrained vectors.
pub const DEFAULT_DIM: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState {
    /// `|V| x D`.
    pub word: Array2<f64>,
    /// `T x K x D`.
    pub topic: Array3<f64>,
}

impl EmbeddingState {
    pub fn dim(&self) -> usize {
        self.word.ncols()
    }

    pub fn num_slices(&self) -> usize {
        self.topic.shape()[0]
    }

    pub fn num_topics(&self) -> usize {
        self.topic.shape()[1]
    }

    pub fn vocab_size(&self) -> usize {
        self.word.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.word.iter().chain(self.topic.iter()).all(|v| v.is_finite())
    }
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    (0..n).map(|_| normal.sample(rng)).collect()
}

pub fn random_word_embeddings(vocab_size: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream(seed, Stream::WordInit);
    let data = gaussian(&mut rng, vocab_size * dim);
    Array2::from_shape_vec((vocab_size, dim), data).expect("shape")
}

pub fn init_topic_embeddings(num_slices: usize, num_topics: usize, dim: usize, seed: u64) -> Array3<f64> {
    let mut rng = stream(seed, Stream::TopicInit);
    let data = gaussian(&mut rng, num_slices * num_topics * dim);
    Array3::from_shape_vec((num_slices, num_topics, dim), data).expect("shape")
}

/// Loads GloVe-format text vectors (`token v_1 ... v_D` per line) for the
/// vocabulary. Vocabulary words missing from the file get `N(0, 0.02^2)`
/// entries drawn in vocabulary order.
pub fn load_word_embeddings(path: &Path, vocab: &VocabularyIndex, dim: usize, seed: u64) -> Result<Array2<f64>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut found: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    let mut hits = 0usize;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(Error::Dimension(format!(
                "{}:{}: vector has {} components, expected {dim}",
                path.display(),
                i + 1,
                values.len()
            )));
        }
        let Some(id) = vocab.id(token) else { continue };
        if found[id].is_some() {
            continue;
        }
        let vector = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{}:{}", path.display(), i + 1)));
        }
        found[id] = Some(vector);
        hits += 1;
    }
    log::info!("pretrained vectors cover {hits}/{} vocabulary words", vocab.len());

    let mut rng = stream(seed, Stream::WordInit);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    let mut out = Array2::zeros((vocab.len(), dim));
    for (id, vector) in found.into_iter().enumerate() {
        let mut row = out.row_mut(id);
        match vector {
            Some(v) => row.iter_mut().zip(v).for_each(|(o, x)| *o = x),
            None => row.iter_mut().for_each(|o| *o = normal.sample(&mut rng)),
        }
    }
    Ok(out)
}
