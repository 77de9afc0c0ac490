//! End-to-end tests driving the compiled binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn keygraph() -> Command {
    Command::new(env!("CARGO_BIN_EXE_keygraph"))
}

fn run(args: &[&str]) -> Output {
    keygraph().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_corpus(dir: &Path, name: &str, docs: &[(&str, &str, &[&str])]) -> PathBuf {
    let path = dir.join(name);
    let mut text = String::new();
    for (id, body, phrases) in docs {
        let phrases_json: Vec<String> = phrases.iter().map(|p| format!("{p:?}")).collect();
        text.push_str(&format!(
            "{{\"id\": {id:?}, \"title\": \"\", \"abstract\": {body:?}, \"keyphrases\": [{}]}}\n",
            phrases_json.join(", ")
        ));
    }
    fs::write(&path, text).unwrap();
    path
}

/// Six documents over a tiny vocabulary, each with two planted
/// two-word phrases; small enough to memorize in a few hundred steps.
fn fixture_corpus(dir: &Path) -> PathBuf {
    let docs: Vec<(String, String, Vec<String>)> = (0..6)
        .map(|i| {
            let pairs = [
                ("traffic", "noise"),
                ("sensor", "network"),
                ("graph", "model"),
                ("wind", "turbine"),
                ("water", "basin"),
                ("solar", "panel"),
            ];
            let (a1, a2) = pairs[i % pairs.len()];
            let (b1, b2) = pairs[(i + 2) % pairs.len()];
            (
                format!("d{i}"),
                format!("study {a1} {a2} results {b1} {b2} method data"),
                vec![format!("{a1} {a2}"), format!("{b1} {b2}")],
            )
        })
        .collect();
    let borrowed: Vec<(&str, &str, Vec<&str>)> = docs
        .iter()
        .map(|(id, body, ph)| {
            (
                id.as_str(),
                body.as_str(),
                ph.iter().map(String::as_str).collect(),
            )
        })
        .collect();
    let as_slices: Vec<(&str, &str, &[&str])> = borrowed
        .iter()
        .map(|(id, body, ph)| (*id, *body, ph.as_slice()))
        .collect();
    write_corpus(dir, "fixture.jsonl", &as_slices)
}

fn train_fixture_dims(
    dir: &Path,
    corpus: &Path,
    seed: u64,
    steps: u64,
    d_in: usize,
    d_h: usize,
) -> PathBuf {
    let out = dir.join(format!("model-{seed}-{steps}.ckpt"));
    let output = run(&[
        "train",
        "--train",
        corpus.to_str().unwrap(),
        "--valid",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        &format!("d_in={d_in}"),
        "--set",
        &format!("d_h={d_h}"),
        "--set",
        "gcn_layers=2",
        "--set",
        "gru_layers=2",
        "--set",
        "batch_size=6",
        "--set",
        &format!("max_steps={steps}"),
        "--set",
        "max_epochs=100000",
        "--set",
        "patience=100000",
        "--seed",
        &seed.to_string(),
    ]);
    assert!(
        output.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    out
}

fn train_fixture(dir: &Path, corpus: &Path, seed: u64, steps: u64) -> PathBuf {
    train_fixture_dims(dir, corpus, seed, steps, 12, 16)
}

#[test]
fn train_produces_checkpoint_and_decreasing_loss() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture_corpus(dir.path());
    let model = train_fixture(dir.path(), &corpus, 5, 120);
    assert!(model.exists());

    let log = fs::read_to_string(dir.path().join("model-5-120.ckpt.log")).unwrap();
    let step_losses: Vec<f64> = log
        .lines()
        .filter(|l| l.split('\t').count() == 4)
        .map(|l| l.split('\t').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(step_losses.len(), 120);
    assert!(step_losses.last().unwrap() < &step_losses[0]);
    // Per-step lines carry the learning rate; epoch lines have 2 fields.
    assert!(log.lines().any(|l| l.split('\t').count() == 2));
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let output = run(&["train", "--valid", "x.jsonl", "--out", "m.ckpt"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let output = run(&["extract", "--nonsense"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_one() {
    let output = run(&["eval", "--model", "/nonexistent.ckpt", "--input", "/nonexistent.jsonl"]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn same_seed_trains_byte_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture_corpus(dir.path());
    let a = train_fixture(dir.path(), &corpus, 7, 25);
    let b_path = dir.path().join("b.ckpt");
    fs::rename(&a, &b_path).unwrap();
    let a = train_fixture(dir.path(), &corpus, 7, 25);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b_path).unwrap());
}

#[test]
fn extract_respects_top_and_reports_bad_docs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture_corpus(dir.path());
    let model = train_fixture(dir.path(), &corpus, 9, 60);

    // One unparseable-into-tokens document among good ones.
    let mixed = write_corpus(
        dir.path(),
        "mixed.jsonl",
        &[
            ("good1", "traffic noise study graph model", &[]),
            ("bad", "!!! ...", &[]),
            ("good2", "sensor network data wind turbine", &[]),
        ],
    );
    let output = keygraph()
        .args([
            "extract",
            "--model",
            model.to_str().unwrap(),
            "--input",
            mixed.to_str().unwrap(),
            "--top",
            "5",
            "--beam",
            "10",
            "--depth",
            "3",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = stdout(&output);
    let mut per_doc = std::collections::HashMap::new();
    for line in text.lines() {
        let mut fields = line.split('\t');
        let id = fields.next().unwrap().to_string();
        *per_doc.entry(id).or_insert(0) += 1;
        assert_eq!(fields.clone().count(), 4, "line {line:?}");
    }
    assert!(per_doc["good1"] <= 5 && per_doc["good1"] >= 1);
    assert!(per_doc["good2"] <= 5);
    assert!(!per_doc.contains_key("bad"));
    let errs = String::from_utf8_lossy(&output.stderr);
    assert!(errs.contains("bad"), "stderr: {errs}");
}

#[test]
fn alpha_controls_mean_phrase_length() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture_corpus(dir.path());
    let model = train_fixture(dir.path(), &corpus, 11, 150);

    let mean_len = |alpha: &str| -> f64 {
        let output = run(&[
            "extract",
            "--model",
            model.to_str().unwrap(),
            "--input",
            corpus.to_str().unwrap(),
            "--alpha",
            alpha,
            "--top",
            "4",
            "--beam",
            "10",
            "--depth",
            "3",
        ]);
        assert!(output.status.success());
        let text = stdout(&output);
        let lengths: Vec<usize> = text
            .lines()
            .map(|l| l.split('\t').nth(2).unwrap().split(' ').count())
            .collect();
        lengths.iter().sum::<usize>() as f64 / lengths.len() as f64
    };
    assert!(mean_len("0") >= mean_len("1000000"));
}

#[test]
fn eval_reports_memorization_and_exact_json_keys() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture_corpus(dir.path());
    let model = train_fixture_dims(dir.path(), &corpus, 13, 600, 20, 28);

    let output = run(&[
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--input",
        corpus.to_str().unwrap(),
        "--top",
        "2",
        "--beam",
        "10",
        "--depth",
        "3",
    ]);
    assert!(output.status.success());
    let text = stdout(&output);
    let json_line = text.lines().last().unwrap();
    let value: serde_json::Value = serde_json::from_str(json_line).unwrap();
    let obj = value.as_object().unwrap();
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        vec!["aic@10", "aic@5", "docs", "f1@10", "f1@5", "ndcg@10", "p@5", "r@5"]
    );
    assert_eq!(obj["docs"], 6);
    let f1 = obj["f1@5"].as_f64().unwrap();
    assert!(f1 >= 0.95, "memorization f1@5 = {f1}");
}

#[test]
fn eval_baseline_runs_without_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture_corpus(dir.path());
    let output = run(&[
        "eval",
        "--baseline",
        "tfidf",
        "--input",
        corpus.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let text = stdout(&output);
    assert!(text.contains("documents evaluated: 6"));
    assert!(text.lines().last().unwrap().starts_with('{'));
}

#[test]
fn inspect_graph_dumps_sorted_edges_matching_hand_weights() {
    let dir = tempfile::tempdir().unwrap();
    // "a b a": positions a:{0,2}, b:{1}.
    let corpus = write_corpus(dir.path(), "tiny.jsonl", &[("t0", "aa bb aa", &[])]);
    let output = run(&["inspect-graph", "--input", corpus.to_str().unwrap(), "--doc", "0"]);
    assert!(output.status.success());
    let text = stdout(&output);
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    // <= N^2 rows, sorted by (i, j).
    assert!(rows.len() <= 4);
    let pairs: Vec<(usize, usize)> = rows
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap()))
        .collect();
    let mut sorted = pairs.clone();
    sorted.sort_unstable();
    assert_eq!(pairs, sorted);
    // Hand-computed weights: fwd a->a 0.5, a->b 1.0, b->a 1.0.
    let find = |i: usize, j: usize| rows.iter().find(|r| r[0] == i.to_string() && r[1] == j.to_string());
    let aa = find(0, 0).expect("a-a row");
    assert_eq!(aa[2], "0.500000");
    assert_eq!(aa[3], "0.500000");
    let ab = find(0, 1).expect("a-b row");
    assert_eq!(ab[2], "1.000000");
    assert_eq!(ab[3], "1.000000");

    let out_of_range = run(&["inspect-graph", "--input", corpus.to_str().unwrap(), "--doc", "5"]);
    assert_eq!(out_of_range.status.code(), Some(1));
}

#[test]
fn grad_check_passes_and_lists_parameters() {
    let output = run(&["grad-check"]);
    assert!(output.status.success());
    let text = stdout(&output);
    assert!(text.contains("embedding"));
    assert!(text.contains("att.v"));
    assert!(text.contains("gradients OK"));
}

#[test]
fn config_file_applies_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture_corpus(dir.path());
    let config = dir.path().join("run.conf");
    fs::write(&config, "d_in = 12\nd_h = 16\ngcn_layers = 2\ngru_layers = 2\nbatch_size = 6\nmax_steps = 10\nmax_epochs = 1000\npatience = 1000\nseed = 3\n").unwrap();
    let out = dir.path().join("conf.ckpt");
    let output = run(&[
        "train",
        "--train",
        corpus.to_str().unwrap(),
        "--valid",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--set",
        "max_steps=5",
    ]);
    assert!(output.status.success());
    let log = fs::read_to_string(dir.path().join("conf.ckpt.log")).unwrap();
    let steps = log.lines().filter(|l| l.split('\t').count() == 4).count();
    assert_eq!(steps, 5, "--set should override the config file");

    let bad_config = dir.path().join("bad.conf");
    fs::write(&bad_config, "unknown_key = 1\n").unwrap();
    let output = run(&[
        "train",
        "--train",
        corpus.to_str().unwrap(),
        "--valid",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--config",
        bad_config.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn pretrained_embeddings_import_and_freeze() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture_corpus(dir.path());
    let vectors = dir.path().join("vectors.txt");
    // 12-dimensional rows for a couple of surface forms.
    let mut lines = String::new();
    for word in ["traffic", "noise", "noises", "graph"] {
        let row: Vec<String> = (0..12).map(|j| format!("{}.0", j)).collect();
        lines.push_str(&format!("{word} {}\n", row.join(" ")));
    }
    fs::write(&vectors, lines).unwrap();

    let out = dir.path().join("emb.ckpt");
    let output = keygraph()
        .args([
            "train",
            "--train",
            corpus.to_str().unwrap(),
            "--valid",
            corpus.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--embeddings",
            vectors.to_str().unwrap(),
            "--freeze-embeddings",
            "--set",
            "d_in=12",
            "--set",
            "d_h=16",
            "--set",
            "gcn_layers=2",
            "--set",
            "gru_layers=2",
            "--set",
            "batch_size=6",
            "--set",
            "max_steps=5",
            "--set",
            "max_epochs=100",
            "--set",
            "patience=100",
        ])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let errs = String::from_utf8_lossy(&output.stderr);
    assert!(errs.contains("hit ratio"), "stderr: {errs}");
}
