//! Single-file checkpoints.
//!
//! Layout: the 8-byte magic `CFDTMCKP`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header, then every
//! tensor as little-endian `f64` in header order. The header echoes the
//! training config, the vocabulary hash, the epoch counter, the optimizer
//! step, the unassociated word sets and the tensor directory. Parameter
//! tensors are named as in [`ModelParams::tensors`]; Adam moments carry
//! the prefixes `adam.m.` and `adam.v.`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::trainer::{AdamState, ModelState, TrainConfig};

pub const MAGIC: &[u8; 8] = b"CFDTMCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the data section, in `f64` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub vocab_hash: String,
    pub epoch: usize,
    pub adam_step: u64,
    pub unassociated: Vec<Vec<usize>>,
    pub tensors: Vec<TensorEntry>,
}

fn groups(state: &ModelState) -> [(&'static str, &ModelParams); 3] {
    [
        ("", &state.params),
        ("adam.m.", &state.optimizer.first),
        ("adam.v.", &state.optimizer.second),
    ]
}

pub fn to_bytes(state: &ModelState, vocab_hash: &str) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (prefix, params) in groups(state) {
        for ((name, values), (_, shape)) in params.tensors().into_iter().zip(params.shapes()) {
            tensors.push(TensorEntry {
                name: format!("{prefix}{name}"),
                shape,
                offset,
            });
            offset += values.len();
            for v in values {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = CheckpointHeader {
        format: "cfdtm-checkpoint".into(),
        version: FORMAT_VERSION,
        config: state.config.clone(),
        vocab_hash: vocab_hash.to_string(),
        epoch: state.epoch,
        adam_step: state.optimizer.step,
        unassociated: state.unassociated.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ModelState, String)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[20..header_end]).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let data = &bytes[header_end..];
    if !data.len().is_multiple_of(8) {
        return Err(bad("data section is not a whole number of f64 values"));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let find = |name: &str| -> Result<&TensorEntry> {
        header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    };
    let shape_of = |name: &str| -> Result<Vec<usize>> { Ok(find(name)?.shape.clone()) };

    let word = shape_of("word_embeddings")?;
    let topic = shape_of("topic_embeddings")?;
    let w1 = shape_of("encoder.w1")?;
    let (&[vocab, dim], &[slices, k, _], &[_, hidden]) = (word.as_slice(), topic.as_slice(), w1.as_slice()) else {
        return Err(bad("unexpected tensor rank"));
    };
    let blank = ModelParams {
        embeddings: crate::embeddings::EmbeddingState {
            word: ndarray::Array2::zeros((vocab, dim)),
            topic: ndarray::Array3::zeros((slices, k, dim)),
        },
        encoder: crate::model::EncoderParams::init(vocab, hidden, k, 0).zeros_like(),
    };
    let fill = |prefix: &str| -> Result<ModelParams> {
        let mut params = blank.clone();
        params.encoder.normalize_input = header.config.normalize_input;
        let shapes = params.shapes();
        for ((name, dst), (_, shape)) in params.tensors_mut().into_iter().zip(shapes) {
            let entry = find(&format!("{prefix}{name}"))?;
            if entry.shape != shape {
                return Err(Error::Checkpoint(format!("tensor {prefix}{name} has shape {:?}, expected {shape:?}", entry.shape)));
            }
            let src = values
                .get(entry.offset..entry.offset + dst.len())
                .ok_or_else(|| Error::Checkpoint(format!("tensor {prefix}{name} out of bounds")))?;
            dst.copy_from_slice(src);
        }
        Ok(params)
    };
    let params = fill("")?;
    let first = fill("adam.m.")?;
    let second = fill("adam.v.")?;
    let state = ModelState {
        config: header.config,
        params,
        optimizer: AdamState {
            step: header.adam_step,
            first,
            second,
        },
        epoch: header.epoch,
        unassociated: header.unassociated,
    };
    Ok((state, header.vocab_hash))
}

pub fn save(state: &ModelState, vocab_hash: &str, path: &Path) -> Result<()> {
    let bytes = to_bytes(state, vocab_hash)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ModelState, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads a checkpoint and refuses it unless it was trained on a corpus
/// with the given vocabulary hash.
pub fn load_for(path: &Path, vocab_hash: &str) -> Result<ModelState> {
    let (state, stored) = load(path)?;
    if stored != vocab_hash {
        return Err(Error::VocabMismatch {
            expected: stored,
            found: vocab_hash.to_string(),
        });
    }
    Ok(state)
}
