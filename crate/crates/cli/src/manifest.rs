//! Run manifests: written before any computation, enough to replay a run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{PreprocessSettings, TrainSettings};
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// A fully resolved command: every default materialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Invocation {
    Preprocess {
        input: PathBuf,
        output: PathBuf,
        settings: PreprocessSettings,
    },
    Train {
        input: PathBuf,
        output: PathBuf,
        settings: TrainSettings,
    },
    Eval {
        input: PathBuf,
        checkpoint: PathBuf,
        output: PathBuf,
        top_words: usize,
        window: usize,
        test_fraction: f64,
        seed: u64,
    },
    Infer {
        input: PathBuf,
        checkpoint: PathBuf,
        output: PathBuf,
    },
    Export {
        input: PathBuf,
        checkpoint: PathBuf,
        output: PathBuf,
        top_words: usize,
        words: Vec<String>,
        topic: Option<usize>,
    },
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Preprocess { .. } => "preprocess",
            Invocation::Train { .. } => "train",
            Invocation::Eval { .. } => "eval",
            Invocation::Infer { .. } => "infer",
            Invocation::Export { .. } => "export",
        }
    }

    pub fn output(&self) -> &Path {
        match self {
            Invocation::Preprocess { output, .. }
            | Invocation::Train { output, .. }
            | Invocation::Eval { output, .. }
            | Invocation::Infer { output, .. }
            | Invocation::Export { output, .. } => output,
        }
    }

    pub fn set_output(&mut self, dir: PathBuf) {
        match self {
            Invocation::Preprocess { output, .. }
            | Invocation::Train { output, .. }
            | Invocation::Eval { output, .. }
            | Invocation::Infer { output, .. }
            | Invocation::Export { output, .. } => *output = dir,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Invocation::Train { settings, .. } => Some(settings.train.seed),
            Invocation::Eval { seed, .. } => Some(*seed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    #[serde(flatten)]
    pub invocation: Invocation,
    /// SHA-256 of the input: raw file bytes for `preprocess`, corpus content
    /// otherwise.
    pub corpus_hash: String,
    pub seed: Option<u64>,
    pub started_unix: u64,
}

impl RunManifest {
    pub fn new(invocation: Invocation, corpus_hash: String) -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: invocation.seed(),
            invocation,
            corpus_hash,
            started_unix,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self).map_err(|e| CliError::Manifest(e.to_string()))?;
        fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))
    }
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
