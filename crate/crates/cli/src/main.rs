mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{PreprocessSettings, TrainSettings};
use crate::error::{CliError, Result};
use crate::manifest::Invocation;

/// Chain-free dynamic topic modeling.
///
/// Every command writes `manifest.json` into its output directory before
/// doing any work; `cfdtm rerun --manifest <file>` replays it.
#[derive(Parser)]
#[command(name = "cfdtm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a JSONL corpus into a time-sliced bag-of-words bundle.
    Preprocess(PreprocessArgs),
    /// Train a model on a bundle (or sweep the evolution intensity).
    Train(TrainArgs),
    /// Topic coherence and diversity per slice, plus downstream metrics when
    /// documents carry labels.
    Eval(EvalArgs),
    /// Document-topic proportions of every bundle document.
    Infer(ModelArgs),
    /// Topic word lists, word-probability evolution and raw embeddings.
    Export(ExportArgs),
    /// Replay a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// JSONL file with `text`, `timestamp` and optional `label`.
    #[arg(long)]
    input: PathBuf,
    /// Bundle directory to create.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_vocab: Option<usize>,
    #[arg(long)]
    min_df: Option<usize>,
    /// Stopword file, one word per line, or `none`.
    #[arg(long)]
    stopwords: Option<String>,
    /// File of `timestamp slice_label` lines overriding one-slice-per-timestamp.
    #[arg(long)]
    slice_map: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus bundle directory.
    #[arg(long)]
    input: PathBuf,
    /// Run directory.
    #[arg(long)]
    output: PathBuf,
    /// Flat `key = value` file; flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    num_topics: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    pi: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Evolution intensity: one value for every slice or one per slice.
    #[arg(long, value_name = "L[,L...]")]
    lambda_t: Option<String>,
    #[arg(long)]
    lambda_uwe: Option<f64>,
    #[arg(long)]
    n_top: Option<usize>,
    #[arg(long)]
    no_etc: bool,
    #[arg(long)]
    no_negative: bool,
    #[arg(long)]
    no_uwe: bool,
    #[arg(long)]
    uwe_masking: bool,
    /// Train once per value, writing `lambda_<v>/` and `sweep.tsv`.
    #[arg(long, value_name = "L,L,...")]
    lambda_sweep: Option<String>,
    /// Top words per topic for sweep evaluation.
    #[arg(long)]
    top_words: Option<usize>,
    /// Pretrained vectors in GloVe text format.
    #[arg(long)]
    glove_path: Option<PathBuf>,
    #[arg(long)]
    freeze_word_embeddings: bool,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    normalize_input: bool,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Coherence window for sweep evaluation.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args)]
struct ModelArgs {
    /// Corpus bundle directory.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Reads `top_words`, `window` and `seed`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    top_words: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    /// Held-out share of labeled documents for classification.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Seed of the train/test split and the classifier.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = cfdtm_core::evaluation::DEFAULT_TOP_WORDS)]
    top_words: usize,
    /// Words whose probability evolution to export.
    #[arg(long, value_delimiter = ',')]
    words: Vec<String>,
    /// Topic for the evolution table.
    #[arg(long)]
    topic: Option<usize>,
}

#[derive(Args)]
struct RerunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Write into this directory instead of the recorded one.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn train_settings(args: &TrainArgs) -> Result<TrainSettings> {
    let mut s = TrainSettings::default();
    if let Some(path) = &args.config {
        s.apply_file(path)?;
    }
    let values: [(&str, Option<String>); 18] = [
        ("seed", args.seed.map(|v| v.to_string())),
        ("num_topics", args.num_topics.map(|v| v.to_string())),
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("lr", args.lr.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("tau", args.tau.map(|v| v.to_string())),
        ("pi", args.pi.map(|v| v.to_string())),
        ("gamma", args.gamma.map(|v| v.to_string())),
        ("lambda_t", args.lambda_t.clone()),
        ("lambda_uwe", args.lambda_uwe.map(|v| v.to_string())),
        ("n_top", args.n_top.map(|v| v.to_string())),
        ("lambda_sweep", args.lambda_sweep.clone()),
        ("top_words", args.top_words.map(|v| v.to_string())),
        ("glove_path", args.glove_path.as_ref().map(|p| p.display().to_string())),
        ("hidden", args.hidden.map(|v| v.to_string())),
        ("embedding_dim", args.embedding_dim.map(|v| v.to_string())),
        ("checkpoint_every", args.checkpoint_every.map(|v| v.to_string())),
        ("window", args.window.map(|v| v.to_string())),
    ];
    for (key, value) in values {
        if let Some(value) = value {
            s.set(key, &value)?;
        }
    }
    let switches = [
        ("no_etc", args.no_etc),
        ("no_negative", args.no_negative),
        ("no_uwe", args.no_uwe),
        ("uwe_masking", args.uwe_masking),
        ("freeze_word_embeddings", args.freeze_word_embeddings),
        ("normalize_input", args.normalize_input),
    ];
    for (key, on) in switches {
        if on {
            s.set(key, "true")?;
        }
    }
    Ok(s)
}

fn invocation(command: Command) -> Result<Option<Invocation>> {
    Ok(Some(match command {
        Command::Preprocess(args) => {
            let mut settings = PreprocessSettings::default();
            if let Some(path) = &args.config {
                settings.apply_file(path)?;
            }
            if let Some(v) = args.max_vocab {
                settings.max_vocab = v;
            }
            if let Some(v) = args.min_df {
                settings.min_df = v;
            }
            if args.stopwords.is_some() {
                settings.stopwords = args.stopwords;
            }
            if args.slice_map.is_some() {
                settings.slice_map = args.slice_map;
            }
            Invocation::Preprocess {
                input: args.input,
                output: args.output,
                settings,
            }
        }
        Command::Train(args) => {
            let settings = train_settings(&args)?;
            Invocation::Train {
                input: args.input,
                output: args.output,
                settings,
            }
        }
        Command::Eval(args) => {
            let mut file = TrainSettings::default();
            if let Some(path) = &args.config {
                file.apply_file(path)?;
            }
            Invocation::Eval {
                input: args.model.input,
                checkpoint: args.model.checkpoint,
                output: args.model.output,
                top_words: args.top_words.unwrap_or(file.top_words),
                window: args.window.unwrap_or(file.window),
                test_fraction: args.test_fraction,
                seed: args.seed.unwrap_or(file.train.seed),
            }
        }
        Command::Infer(args) => Invocation::Infer {
            input: args.input,
            checkpoint: args.checkpoint,
            output: args.output,
        },
        Command::Export(args) => Invocation::Export {
            input: args.model.input,
            checkpoint: args.model.checkpoint,
            output: args.model.output,
            top_words: args.top_words,
            words: args.words,
            topic: args.topic,
        },
        Command::Rerun(args) => {
            commands::rerun(&args.manifest, args.output)?;
            return Ok(None);
        }
    }))
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("CFDTM_NUM_THREADS") else {
        return Ok(());
    };
    let n: usize = value.trim().parse().map_err(|_| CliError::Value {
        key: "CFDTM_NUM_THREADS".into(),
        message: format!("{value:?} is not a thread count"),
    })?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = configure_threads()
        .and_then(|_| invocation(cli.command))
        .and_then(|inv| inv.map_or(Ok(()), commands::run));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
