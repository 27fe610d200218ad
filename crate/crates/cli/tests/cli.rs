use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use cfdtm_core::synthetic::{generate, SyntheticConfig};
use serde_json::Value;
use tempfile::TempDir;

fn cfdtm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfdtm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn cfdtm")
}

fn ok(args: &[&str]) -> Output {
    let out = cfdtm(args);
    assert!(
        out.status.success(),
        "cfdtm {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_corpus(dir: &Path) -> PathBuf {
    let corpus = generate(&SyntheticConfig {
        num_slices: 3,
        num_topics: 3,
        shared_per_topic: 8,
        slice_per_topic: 3,
        background: 4,
        docs_per_slice: 30,
        doc_len: (15, 25),
        ..Default::default()
    })
    .unwrap();
    let path = dir.join("docs.jsonl");
    let lines: Vec<String> = corpus
        .documents
        .iter()
        .map(|d| serde_json::to_string(d).unwrap())
        .collect();
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

/// Preprocessed bundle in `<tmp>/bundle`.
fn bundle(tmp: &TempDir) -> PathBuf {
    let jsonl = write_corpus(tmp.path());
    let out = tmp.path().join("bundle");
    ok(&["preprocess", "--input", s(&jsonl), "--output", s(&out)]);
    out
}

fn tiny_train(bundle: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![
        "train",
        "--input",
        s(bundle),
        "--output",
        s(out),
        "--num-topics",
        "3",
        "--epochs",
        "3",
        "--batch-size",
        "16",
        "--hidden",
        "16",
        "--embedding-dim",
        "8",
        "--seed",
        "5",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn preprocess_prints_and_writes_stats() {
    let tmp = TempDir::new().unwrap();
    let jsonl = write_corpus(tmp.path());
    let out_dir = tmp.path().join("bundle");
    let out = ok(&["preprocess", "--input", s(&jsonl), "--output", s(&out_dir)]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("#docs\taverage_length\tvocab_size\t#slices\n"), "{stdout}");
    let row: Vec<&str> = stdout.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[0], "90");
    assert_eq!(row[3], "3");
    assert_eq!(fs::read_to_string(out_dir.join("stats.tsv")).unwrap(), stdout);
    let m = manifest(&out_dir);
    assert_eq!(m["command"], "preprocess");
    assert_eq!(m["corpus_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn empty_corpus_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("empty.jsonl");
    fs::write(&path, "").unwrap();
    let out = cfdtm(&["preprocess", "--input", s(&path), "--output", s(&tmp.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty corpus"));
}

#[test]
fn malformed_line_is_reported_with_its_number() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.jsonl");
    fs::write(
        &path,
        "{\"text\": \"alpha beta gamma\", \"timestamp\": 2000}\n{\"text\": oops}\n",
    )
    .unwrap();
    let out = cfdtm(&["preprocess", "--input", s(&path), "--output", s(&tmp.path().join("o"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.jsonl:2"), "{err}");
}

#[test]
fn train_writes_manifest_log_and_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let b = bundle(&tmp);
    let run = tmp.path().join("run");
    tiny_train(&b, &run, &["--checkpoint-every", "2"]);
    let m = manifest(&run);
    assert_eq!(m["command"], "train");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["settings"]["train"]["num_topics"], 3);
    let log = fs::read_to_string(run.join("train.log")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch\tL_TM\tL_pos\tL_neg\tL_UWE\ttotal");
    assert_eq!(lines.len(), 4);
    assert!(run.join("checkpoint.bin").exists());
    assert!(run.join("checkpoint_epoch_0002.bin").exists());
}

#[test]
fn manifest_comes_first_and_echoes_defaults() {
    let tmp = TempDir::new().unwrap();
    let b = bundle(&tmp);
    let run = tmp.path().join("run");
    // Full default settings would train for a long time; the manifest must
    // exist well before that, so read it and stop the process.
    let mut child = Command::new(env!("CARGO_BIN_EXE_cfdtm"))
        .args(["train", "--input", s(&b), "--output", s(&run)])
        .env("RUST_LOG", "warn")
        .spawn()
        .unwrap();
    let path = run.join("manifest.json");
    let deadline = Instant::now() + Duration::from_secs(60);
    let m = loop {
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(v) = serde_json::from_str::<Value>(&text) {
                break v;
            }
        }
        assert!(Instant::now() < deadline, "no manifest after 60 s");
        std::thread::sleep(Duration::from_millis(20));
    };
    let _ = child.kill();
    let _ = child.wait();
    assert!(!run.join("checkpoint.bin").exists());
    let train = &m["settings"]["train"];
    assert_eq!(train["num_topics"], 50);
    assert_eq!(train["learning_rate"], 0.002);
    assert_eq!(train["epochs"], 800);
    assert_eq!(train["batch_size"], 200);
    assert_eq!(m["seed"], 0);
    assert_eq!(m["tool"], "cfdtm-cli");
}

#[test]
fn flags_override_config_file() {
    let tmp = TempDir::new().unwrap();
    let b = bundle(&tmp);
    let run = tmp.path().join("run");
    let cfg = tmp.path().join("train.cfg");
    fs::write(&cfg, "epochs = 1\nnum-topics = 4\ntau = 0.3\n").unwrap();
    ok(&[
        "train", "--input", s(&b), "--output", s(&run), "--config", s(&cfg), "--num-topics", "2", "--hidden", "8",
        "--embedding-dim", "4",
    ]);
    let train = &manifest(&run)["settings"]["train"];
    assert_eq!(train["num_topics"], 2);
    assert_eq!(train["loss"]["tau"], 0.3);
}

#[test]
fn bad_config_line_names_file_and_line() {
    let tmp = TempDir::new().unwrap();
    let b = bundle(&tmp);
    let cfg = tmp.path().join("train.cfg");
    fs::write(&cfg, "epochs = 1\nlr = fast\n").unwrap();
    let out = cfdtm(&["train", "--input", s(&b), "--output", s(&tmp.path().join("r")), "--config", s(&cfg)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.cfg:2"), "{err}");
}

#[test]
fn identical_runs_give_identical_checkpoints() {
    let tmp = TempDir::new().unwrap();
    let b = bundle(&tmp);
    let (r1, r2) = (tmp.path().join("r1"), tmp.path().join("r2"));
    tiny_train(&b, &r1, &[]);
    tiny_train(&b, &r2, &[]);
    assert_eq!(
        fs::read(r1.join("checkpoint.bin")).unwrap(),
        fs::read(r2.join("checkpoint.bin")).unwrap()
    );
    assert_eq!(
        fs::read(r1.join("train.log")).unwrap(),
        fs::read(r2.join("train.log")).unwrap()
    );
}

#[test]
fn rerun_reproduces_training() {
    let tmp = TempDir::new().unwrap();
    let b = bundle(&tmp);
    let run = tmp.path().join("run");
    tiny_train(&b, &run, &[]);
    let replay = tmp.path().join("replay");
    ok(&["rerun", "--manifest", s(&run.join("manifest.json")), "--output", s(&replay)]);
    for file in ["checkpoint.bin", "train.log"] {
        assert_eq!(fs::read(run.join(file)).unwrap(), fs::read(replay.join(file)).unwrap(), "{file}");
    }
    let (a, b) = (manifest(&run), manifest(&replay));
    assert_eq!(a["settings"], b["settings"]);
    assert_eq!(a["corpus_hash"], b["corpus_hash"]);
}

#[test]
fn rerun_refuses_a_changed_input() {
    let tmp = TempDir::new().unwrap();
    let jsonl = write_corpus(tmp.path());
    let out_dir = tmp.path().join("bundle");
    ok(&["preprocess", "--input", s(&jsonl), "--output", s(&out_dir)]);
    let mut text = fs::read_to_string(&jsonl).unwrap();
    text.push_str("{\"text\": \"extra words here\", \"timestamp\": 2001}\n");
    fs::write(&jsonl, text).unwrap();
    let out = cfdtm(&["rerun", "--manifest", s(&out_dir.join("manifest.json"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash changed"));
}

#[test]
fn eval_infer_export_outputs() {
    let tmp = TempDir::new().unwrap();
    let b = bundle(&tmp);
    let run = tmp.path().join("run");
    tiny_train(&b, &run, &[]);
    let ckpt = run.join("checkpoint.bin");

    let ev = tmp.path().join("eval");
    let out = ok(&[
        "eval", "--input", s(&b), "--checkpoint", s(&ckpt), "--output", s(&ev), "--top-words", "5",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("TC\t")).count(), 4);
    assert!(text.contains("TD\tavg\t"));
    assert!(text.contains("accuracy\t"));
    let report: Value = serde_json::from_str(&fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["slices"].as_array().unwrap().len(), 3);
    assert!(report["downstream"]["nmi"].is_number());

    let inf = tmp.path().join("infer");
    ok(&["infer", "--input", s(&b), "--checkpoint", s(&ckpt), "--output", s(&inf)]);
    let theta = fs::read_to_string(inf.join("theta.tsv")).unwrap();
    assert_eq!(theta.lines().count(), 90);
    for line in theta.lines() {
        let row: Vec<f64> = line.split('\t').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row.len(), 3);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    let ex = tmp.path().join("export");
    ok(&[
        "export", "--input", s(&b), "--checkpoint", s(&ckpt), "--output", s(&ex), "--top-words", "4", "--words",
        "shaaaa,shabaa", "--topic", "1",
    ]);
    let topics: Value = serde_json::from_str(&fs::read_to_string(ex.join("topics.json")).unwrap()).unwrap();
    let topics = topics.as_array().unwrap();
    assert_eq!(topics.len(), 3 * 3);
    assert!(topics.iter().all(|t| t["words"].as_array().unwrap().len() == 4));

    // Evolution values are the topic-1 scores of the two words, which are
    // also what topics.json ranks by.
    let evo = fs::read_to_string(ex.join("word_evolution.tsv")).unwrap();
    let mut lines = evo.lines();
    assert_eq!(lines.next().unwrap().split('\t').count(), 4);
    for line in lines {
        let cells: Vec<&str> = line.split('\t').collect();
        let vals: Vec<f64> = cells[1..].iter().map(|v| v.parse().unwrap()).collect();
        assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let phi = fs::read_to_string(ex.join("topic_embeddings.tsv")).unwrap();
    assert_eq!(phi.lines().count(), 1 + 3 * 3);
    assert!(ex.join("word_embeddings.tsv").exists());
}

#[test]
fn checkpoint_for_another_vocabulary_is_refused() {
    let tmp = TempDir::new().unwrap();
    let b = bundle(&tmp);
    let run = tmp.path().join("run");
    tiny_train(&b, &run, &[]);
    let jsonl = write_corpus(tmp.path());
    let other = tmp.path().join("other");
    ok(&["preprocess", "--input", s(&jsonl), "--output", s(&other), "--max-vocab", "20"]);
    let out = cfdtm(&[
        "infer", "--input", s(&other), "--checkpoint", s(&run.join("checkpoint.bin")), "--output",
        s(&tmp.path().join("i")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocabulary hash mismatch"));
}

#[test]
fn lambda_sweep_writes_one_run_per_value() {
    let tmp = TempDir::new().unwrap();
    let b = bundle(&tmp);
    let run = tmp.path().join("sweep");
    tiny_train(&b, &run, &["--lambda-sweep", "0.5,2", "--top-words", "5"]);
    let table = fs::read_to_string(run.join("sweep.tsv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "lambda\tTC\tTD\tfinal_loss");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0.5\t"));
    assert!(lines[2].starts_with("2\t"));
    for dir in ["lambda_0.5", "lambda_2"] {
        assert!(run.join(dir).join("checkpoint.bin").exists());
        assert!(run.join(dir).join("report.json").exists());
    }
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let b = bundle(&tmp);
    let cfg = tmp.path().join("c.cfg");
    fs::write(&cfg, "temperature = 0.1\n").unwrap();
    let out = cfdtm(&["train", "--input", s(&b), "--output", s(&tmp.path().join("r")), "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown training setting"));
}
