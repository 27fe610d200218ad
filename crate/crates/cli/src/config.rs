//! Flat `key = value` configuration files. Keys match the long flag names
//! (dashes or underscores); `#` starts a comment.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cfdtm_core::evaluation::{DEFAULT_TOP_WORDS, DEFAULT_WINDOW};
use cfdtm_core::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn read_config(path: &Path) -> Result<Vec<Entry>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text, path)
}

pub fn parse_config(text: &str, path: &Path) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected `key = value`, found {line:?}"),
            });
        };
        out.push(Entry {
            line: i + 1,
            key: key.trim().replace('-', "_"),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| CliError::Value {
        key: key.to_string(),
        message: format!("{value:?}: {e}"),
    })
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(CliError::Value {
            key: key.to_string(),
            message: format!("{value:?} is not a boolean"),
        }),
    }
}

pub fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// Everything `train` needs besides the corpus location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub train: TrainConfig,
    pub glove_path: Option<PathBuf>,
    pub lambda_sweep: Option<Vec<f64>>,
    pub top_words: usize,
    pub window: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            train: TrainConfig::default(),
            glove_path: None,
            lambda_sweep: None,
            top_words: DEFAULT_TOP_WORDS,
            window: DEFAULT_WINDOW,
        }
    }
}

impl TrainSettings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "seed" => t.seed = parse(key, value)?,
            "num_topics" => t.num_topics = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "lr" | "learning_rate" => t.learning_rate = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "tau" => t.loss.tau = parse(key, value)?,
            "pi" => t.loss.pi = parse(key, value)?,
            "gamma" => t.loss.gamma = parse(key, value)?,
            "lambda_t" => t.loss.lambda_t = parse_list(key, value)?,
            "lambda_uwe" => t.loss.lambda_uwe = parse(key, value)?,
            "n_top" => t.loss.n_top = parse(key, value)?,
            "no_etc" => t.loss.enable_etc = !parse_bool(key, value)?,
            "no_negative" => t.loss.enable_negative = !parse_bool(key, value)?,
            "no_uwe" => t.loss.enable_uwe = !parse_bool(key, value)?,
            "uwe_masking" => t.loss.uwe_masking = parse_bool(key, value)?,
            "freeze_word_embeddings" => t.freeze_word_embeddings = parse_bool(key, value)?,
            "hidden" => t.hidden = parse(key, value)?,
            "embedding_dim" => t.embedding_dim = parse(key, value)?,
            "normalize_input" => t.normalize_input = parse_bool(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "glove_path" => self.glove_path = Some(PathBuf::from(value)),
            "lambda_sweep" => self.lambda_sweep = Some(parse_list(key, value)?),
            "top_words" => self.top_words = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            _ => {
                return Err(CliError::Value {
                    key: key.to_string(),
                    message: "unknown training setting".into(),
                })
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        for entry in read_config(path)? {
            self.set(&entry.key, &entry.value).map_err(|e| CliError::Config {
                path: path.to_path_buf(),
                line: entry.line,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }
}

/// Options of `preprocess`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSettings {
    pub max_vocab: usize,
    pub min_df: usize,
    /// `None` for the built-in English list; a path, or `none` to disable.
    pub stopwords: Option<String>,
    pub slice_map: Option<PathBuf>,
}

impl Default for PreprocessSettings {
    fn default() -> Self {
        PreprocessSettings {
            max_vocab: 10_000,
            min_df: 1,
            stopwords: None,
            slice_map: None,
        }
    }
}

impl PreprocessSettings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "max_vocab" => self.max_vocab = parse(key, value)?,
            "min_df" => self.min_df = parse(key, value)?,
            "stopwords" => self.stopwords = Some(value.to_string()),
            "slice_map" => self.slice_map = Some(PathBuf::from(value)),
            _ => {
                return Err(CliError::Value {
                    key: key.to_string(),
                    message: "unknown preprocessing setting".into(),
                })
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        for entry in read_config(path)? {
            self.set(&entry.key, &entry.value).map_err(|e| CliError::Config {
                path: path.to_path_buf(),
                line: entry.line,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_dashes() {
        let entries = parse_config("# header\nnum-topics = 7\n\nlr=0.01 # fast\n", Path::new("x")).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].key, "num_topics");
        assert_eq!(entries[1].value, "0.01");
        assert_eq!(entries[1].line, 4);
    }

    #[test]
    fn rejects_lines_without_equals() {
        let err = parse_config("epochs 5\n", Path::new("cfg")).unwrap_err();
        assert!(err.to_string().contains("cfg:1"), "{err}");
    }

    #[test]
    fn typed_settings() {
        let mut s = TrainSettings::default();
        s.set("lambda_t", "0.5, 1,2").unwrap();
        s.set("no_uwe", "yes").unwrap();
        s.set("tau", "0.2").unwrap();
        assert_eq!(s.train.loss.lambda_t, vec![0.5, 1.0, 2.0]);
        assert!(!s.train.loss.enable_uwe);
        assert_eq!(s.train.loss.tau, 0.2);
        assert!(s.set("epochs", "many").is_err());
        assert!(s.set("bogus", "1").is_err());
    }
}
