use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cfdtm_core::checkpoint;
use cfdtm_core::corpus::{read_jsonl, CorpusOptions, SliceRule, Stopwords, TimeSlicedCorpus};
use cfdtm_core::embeddings::load_word_embeddings;
use cfdtm_core::evaluation::{evaluate_downstream, evaluate_dynamic_topics, EvalReport};
use cfdtm_core::trainer::{export_topics, export_word_evolution, infer_theta, train_state, EpochLog, ModelState};
use cfdtm_core::{build_corpus, BowDocument};

use crate::config::{PreprocessSettings, TrainSettings};
use crate::error::{CliError, Result};
use crate::manifest::{file_hash, Invocation, RunManifest};

pub const TRAIN_LOG: &str = "train.log";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const SWEEP_REPORT: &str = "sweep.tsv";
pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";
pub const THETA: &str = "theta.tsv";
pub const TOPICS: &str = "topics.json";
pub const EVOLUTION: &str = "word_evolution.tsv";
pub const TOPIC_EMBEDDINGS: &str = "topic_embeddings.tsv";
pub const WORD_EMBEDDINGS: &str = "word_embeddings.tsv";
pub const STATS: &str = "stats.tsv";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Writes the manifest, then executes.
pub fn run(invocation: Invocation) -> Result<()> {
    let hash = input_hash(&invocation)?;
    execute(invocation, hash)
}

fn input_hash(invocation: &Invocation) -> Result<String> {
    Ok(match invocation {
        Invocation::Preprocess { input, .. } => file_hash(input)?,
        Invocation::Train { input, .. }
        | Invocation::Eval { input, .. }
        | Invocation::Infer { input, .. }
        | Invocation::Export { input, .. } => TimeSlicedCorpus::read_bundle(input)?.content_hash(),
    })
}

/// Replays a manifest, optionally into a different directory. Refuses if
/// the input no longer has the recorded hash.
pub fn rerun(manifest_path: &Path, output: Option<PathBuf>) -> Result<()> {
    let manifest = RunManifest::read(manifest_path)?;
    let mut invocation = manifest.invocation;
    if let Some(dir) = output {
        invocation.set_output(dir);
    }
    let hash = input_hash(&invocation)?;
    if hash != manifest.corpus_hash {
        return Err(CliError::Manifest(format!(
            "input hash changed since the recorded run ({} != {})",
            hash, manifest.corpus_hash
        )));
    }
    execute(invocation, hash)
}

fn execute(invocation: Invocation, hash: String) -> Result<()> {
    let path = RunManifest::new(invocation.clone(), hash).write(invocation.output())?;
    log::info!("{}: wrote {}", invocation.name(), path.display());
    match invocation {
        Invocation::Preprocess { input, output, settings } => preprocess(&input, &output, &settings),
        Invocation::Train { input, output, settings } => train(&input, &output, &settings),
        Invocation::Eval {
            input,
            checkpoint,
            output,
            top_words,
            window,
            test_fraction,
            seed,
        } => eval(&input, &checkpoint, &output, top_words, window, test_fraction, seed),
        Invocation::Infer { input, checkpoint, output } => infer(&input, &checkpoint, &output),
        Invocation::Export {
            input,
            checkpoint,
            output,
            top_words,
            words,
            topic,
        } => export(&input, &checkpoint, &output, top_words, &words, topic),
    }
}

fn preprocess(input: &Path, output: &Path, settings: &PreprocessSettings) -> Result<()> {
    let docs = read_jsonl(input)?;
    let stopwords = match settings.stopwords.as_deref() {
        None => Stopwords::english(),
        Some("none") => Stopwords::none(),
        Some(path) => Stopwords::from_file(Path::new(path))?,
    };
    let slicing = match &settings.slice_map {
        Some(path) => SliceRule::from_mapping_file(path)?,
        None => SliceRule::ByTimestamp,
    };
    let options = CorpusOptions {
        max_vocab: settings.max_vocab,
        min_df: settings.min_df,
        stopwords,
        slicing,
    };
    let corpus = build_corpus(&docs, &options)?;
    corpus.write_bundle(output)?;
    let table = stats_table(&corpus);
    write_file(&output.join(STATS), &table)?;
    print!("{table}");
    Ok(())
}

pub fn stats_table(corpus: &TimeSlicedCorpus) -> String {
    let s = corpus.stats();
    let mut out = String::from("#docs\taverage_length\tvocab_size\t#slices\n");
    let _ = writeln!(out, "{}\t{:.2}\t{}\t{}", s.num_docs, s.average_length, s.vocab_size, s.num_slices);
    out
}

fn initial_state(corpus: &TimeSlicedCorpus, settings: &TrainSettings) -> Result<ModelState> {
    let cfg = &settings.train;
    let word = match &settings.glove_path {
        Some(path) => Some(load_word_embeddings(path, corpus.vocab(), cfg.embedding_dim, cfg.seed)?),
        None => None,
    };
    Ok(ModelState::init(corpus, cfg, word)?)
}

/// Trains one model into `dir`: `train.log` grows an epoch at a time,
/// periodic checkpoints are `checkpoint_epoch_NNNN.bin`, the final one
/// `checkpoint.bin`.
fn train_one(corpus: &TimeSlicedCorpus, dir: &Path, settings: &TrainSettings) -> Result<(ModelState, Vec<EpochLog>)> {
    create_dir(dir)?;
    let mut state = initial_state(corpus, settings)?;
    let log_path = dir.join(TRAIN_LOG);
    let file = File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    writeln!(log, "{}", EpochLog::HEADER).map_err(|e| CliError::io(&log_path, e))?;
    let vocab_hash = corpus.vocab_hash();
    let every = settings.train.checkpoint_every;
    let epochs = settings.train.epochs;
    let logs = train_state(corpus, &mut state, |st, entry| {
        writeln!(log, "{}", entry.to_tsv())
            .and_then(|_| log.flush())
            .map_err(|e| cfdtm_core::Error::io(&log_path, e))?;
        if every > 0 && st.epoch % every == 0 && st.epoch < epochs {
            checkpoint::save(st, &vocab_hash, &dir.join(format!("checkpoint_epoch_{:04}.bin", st.epoch)))?;
        }
        if st.epoch % 50 == 0 || st.epoch == epochs {
            log::info!("epoch {}/{}: total {:.4}", st.epoch, epochs, entry.total);
        }
        Ok(())
    })?;
    checkpoint::save(&state, &vocab_hash, &dir.join(CHECKPOINT))?;
    Ok((state, logs))
}

fn train(input: &Path, output: &Path, settings: &TrainSettings) -> Result<()> {
    let corpus = TimeSlicedCorpus::read_bundle(input)?;
    let Some(sweep) = &settings.lambda_sweep else {
        train_one(&corpus, output, settings)?;
        return Ok(());
    };
    if sweep.is_empty() {
        return Err(CliError::Usage("--lambda-sweep needs at least one value".into()));
    }
    let report_path = output.join(SWEEP_REPORT);
    let mut report = String::from("lambda\tTC\tTD\tfinal_loss\n");
    write_file(&report_path, &report)?;
    for &lambda in sweep {
        let mut run = settings.clone();
        run.lambda_sweep = None;
        run.train.loss.lambda_t = vec![lambda];
        let dir = output.join(format!("lambda_{lambda}"));
        let (state, logs) = train_one(&corpus, &dir, &run)?;
        let eval = evaluate_dynamic_topics(&state, &corpus, run.top_words, run.window)?;
        write_file(&dir.join(REPORT_TEXT), eval.to_text())?;
        write_file(&dir.join(REPORT_JSON), eval.to_json())?;
        let final_loss = logs.last().map_or(f64::NAN, |l| l.total);
        let _ = writeln!(report, "{lambda}\t{:.6}\t{:.6}\t{final_loss:.6}", eval.avg_tc, eval.avg_td);
        write_file(&report_path, &report)?;
        println!("lambda {lambda}: TC {:.4} TD {:.4}", eval.avg_tc, eval.avg_td);
    }
    Ok(())
}

fn load_pair(input: &Path, checkpoint_path: &Path) -> Result<(TimeSlicedCorpus, ModelState)> {
    let corpus = TimeSlicedCorpus::read_bundle(input)?;
    let state = checkpoint::load_for(checkpoint_path, &corpus.vocab_hash())?;
    if state.num_slices() != corpus.num_slices() {
        return Err(CliError::Usage(format!(
            "checkpoint has {} slices, corpus {}",
            state.num_slices(),
            corpus.num_slices()
        )));
    }
    Ok((corpus, state))
}

fn eval(
    input: &Path,
    checkpoint_path: &Path,
    output: &Path,
    top_words: usize,
    window: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<()> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CliError::Usage(format!("test fraction {test_fraction} must be in (0, 1)")));
    }
    let (corpus, state) = load_pair(input, checkpoint_path)?;
    let mut report: EvalReport = evaluate_dynamic_topics(&state, &corpus, top_words, window)?;
    report.downstream = evaluate_downstream(&state, &corpus, test_fraction, seed)?;
    write_file(&output.join(REPORT_TEXT), report.to_text())?;
    write_file(&output.join(REPORT_JSON), report.to_json())?;
    print!("{}", report.to_text());
    Ok(())
}

fn infer(input: &Path, checkpoint_path: &Path, output: &Path) -> Result<()> {
    let (corpus, state) = load_pair(input, checkpoint_path)?;
    let docs: Vec<&BowDocument> = corpus.documents().map(|(_, d)| d).collect();
    let theta = infer_theta(&state, &docs)?;
    let mut out = String::new();
    for row in theta.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    write_file(&output.join(THETA), out)
}

fn export(
    input: &Path,
    checkpoint_path: &Path,
    output: &Path,
    top_words: usize,
    words: &[String],
    topic: Option<usize>,
) -> Result<()> {
    let (corpus, state) = load_pair(input, checkpoint_path)?;
    let topics = export_topics(&state, &corpus, top_words.min(corpus.vocab_size()))?;
    let json = serde_json::to_string_pretty(&topics).map_err(|e| CliError::Usage(e.to_string()))?;
    write_file(&output.join(TOPICS), json + "\n")?;

    let emb = &state.params.embeddings;
    let mut phi = String::from("slice\ttopic\tvector\n");
    for (t, slice) in emb.topic.outer_iter().enumerate() {
        for (k, row) in slice.outer_iter().enumerate() {
            let v: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(phi, "{}\t{k}\t{}", corpus.slices()[t].key, v.join(" "));
        }
    }
    write_file(&output.join(TOPIC_EMBEDDINGS), phi)?;
    let mut w = String::from("word\tvector\n");
    for (i, row) in emb.word.outer_iter().enumerate() {
        let v: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(w, "{}\t{}", corpus.vocab().token(i), v.join(" "));
    }
    write_file(&output.join(WORD_EMBEDDINGS), w)?;

    if !words.is_empty() {
        let topic = topic.ok_or_else(|| CliError::Usage("--words needs --topic".into()))?;
        let ids = words
            .iter()
            .map(|word| {
                corpus
                    .vocab()
                    .id(word)
                    .ok_or_else(|| CliError::Usage(format!("{word:?} is not in the vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        let table = export_word_evolution(&state, &ids, topic)?;
        let keys: Vec<&str> = corpus.slices().iter().map(|s| s.key.as_str()).collect();
        let mut out = format!("word\t{}\n", keys.join("\t"));
        for (word, row) in words.iter().zip(table.rows()) {
            let v: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{word}\t{}", v.join("\t"));
        }
        write_file(&output.join(EVOLUTION), out)?;
    }
    Ok(())
}
