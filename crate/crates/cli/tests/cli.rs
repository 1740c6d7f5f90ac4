use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dfa_bisim::encoder::{train, Checkpoint, TrainConfig};
use dfa_bisim::{Dfa, DfaSpaceConfig, InducedMdp};
use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfa-bisim")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn sample(dir: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    let out = path(dir, name);
    let mut args = vec!["sample", "--out", s(&out)];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn corpus(p: &Path) -> Vec<Dfa> {
    fs::read_to_string(p).unwrap().lines().map(|l| Dfa::from_json(l).unwrap()).collect()
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let args = ["--kind", "reach-avoid", "--count", "3", "--seed", "4", "--alphabet-size", "3"];
    let a = sample(&dir, "a.ndjson", &args);
    let b = sample(&dir, "b.ndjson", &args);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let mut outputs = Vec::new();
    for name in ["m1.csv", "m2.csv"] {
        let out = path(&dir, name);
        assert_eq!(code(&run(&["metric", "--corpus", s(&a), "--out", s(&out)])), 0);
        outputs.push(out);
    }
    assert_eq!(fs::read(&outputs[0]).unwrap(), fs::read(&outputs[1]).unwrap());
    let r1 = read_json(&PathBuf::from(format!("{}.report.json", s(&outputs[0]))));
    let r2 = read_json(&PathBuf::from(format!("{}.report.json", s(&outputs[1]))));
    assert_eq!(r1, r2);
    assert_eq!(r1["mismatches"], 0);

    let mut checkpoints = Vec::new();
    for name in ["c1.json", "c2.json"] {
        let out = path(&dir, name);
        let o = run(&["train", "--corpus", s(&a), "--out", s(&out), "--epochs", "20", "--seed", "3"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        checkpoints.push(out);
    }
    assert_eq!(fs::read(&checkpoints[0]).unwrap(), fs::read(&checkpoints[1]).unwrap());
    let m1 = read_json(&PathBuf::from(format!("{}.manifest.json", s(&checkpoints[0]))));
    let m2 = read_json(&PathBuf::from(format!("{}.manifest.json", s(&checkpoints[1]))));
    assert_eq!(m1["run_id"], m2["run_id"]);
    assert_eq!(m1["run_id"].as_str().unwrap().len(), 16);
    assert_eq!(m1["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(m1["outputs"].as_array().unwrap().len() >= 2);
}

#[test]
fn empty_corpus_gives_the_sink_pair() {
    let dir = TempDir::new().unwrap();
    let empty = path(&dir, "empty.ndjson");
    fs::write(&empty, "").unwrap();
    let out = path(&dir, "sinks.csv");
    let o = run(&["metric", "--corpus", s(&empty), "--out", s(&out), "--alphabet-size", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<Vec<String>> =
        fs::read_to_string(&out).unwrap().lines().map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 3);
    let d: f64 = rows[1][2].parse().unwrap();
    assert!((d - 20.0).abs() <= 1e-6, "{d}");
    assert_eq!(rows[1][1].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[2][2].parse::<f64>().unwrap(), 0.0);

    // Without an alphabet the empty corpus is rejected as bad input.
    assert_eq!(code(&run(&["metric", "--corpus", s(&empty), "--out", s(&out)])), 1);
}

#[test]
fn samplers_respect_state_ranges() {
    let dir = TempDir::new().unwrap();
    let rad = sample(&dir, "rad.ndjson", &["--kind", "rad", "--count", "40", "--states", "geometric:0.5:10"]);
    for d in corpus(&rad) {
        assert!(d.num_states() <= 10);
        assert_eq!(d.minimize().num_states(), d.num_states());
    }
    let ood = sample(&dir, "ood.ndjson", &["--kind", "rad", "--count", "20", "--states", "uniform:11:20"]);
    for d in corpus(&ood) {
        assert!((11..=20).contains(&d.num_states()), "{}", d.num_states());
    }
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "x.ndjson");
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["sample", "--out", s(&out), "--states", "normal:1:2"])), 1);
    assert_eq!(code(&run(&["sample", "--out", s(&out), "--kind", "reach-avoid", "--alphabet-size", "1"])), 1);

    let bad_config = path(&dir, "bad.json");
    fs::write(&bad_config, r#"{"no_such_field": 1}"#).unwrap();
    assert_eq!(code(&run(&["sample", "--out", s(&out), "--config", s(&bad_config)])), 1);

    let garbage = path(&dir, "garbage.ndjson");
    fs::write(&garbage, "{not json}\n").unwrap();
    assert_eq!(code(&run(&["metric", "--corpus", s(&garbage), "--out", s(&out)])), 1);
    assert_eq!(code(&run(&["metric", "--corpus", s(&path(&dir, "missing")), "--out", s(&out)])), 1);
}

#[test]
fn embedding_key_needs_a_checkpoint() {
    let dir = TempDir::new().unwrap();
    let tasks = sample(&dir, "t.ndjson", &["--count", "2", "--alphabet-size", "5"]);
    let out = path(&dir, "p.csv");
    let o = run(&["policy", "--corpus", s(&tasks), "--out", s(&out), "--conditioning", "embedding-key", "--episodes", "10"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn collapsed_encoder_is_an_internal_error() {
    let dir = TempDir::new().unwrap();
    let tasks = sample(&dir, "t.ndjson", &["--count", "2", "--alphabet-size", "5", "--seed", "1"]);
    let dfas = corpus(&tasks);
    let space = InducedMdp::enumerate(&dfas, &DfaSpaceConfig::new(5, 10, 0.9).unwrap()).unwrap();
    let config = TrainConfig { epochs: 2, ..TrainConfig::default() };
    let mut trained = train(&space, &config).unwrap();
    trained.model.collapse();
    let ck = Checkpoint { version: Checkpoint::VERSION, model: trained.model, policy: trained.policy, config, run_id: None };
    let ck_path = path(&dir, "collapsed.json");
    fs::write(&ck_path, ck.to_json()).unwrap();

    let out = path(&dir, "p.csv");
    let args = ["policy", "--corpus", s(&tasks), "--out", s(&out), "--checkpoint", s(&ck_path)];
    let o = run(&[&args[..], &["--conditioning", "embedding-key", "--episodes", "10"]].concat());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("embedding"), "{}", String::from_utf8_lossy(&o.stderr));

    let heat = path(&dir, "h.csv");
    let o = run(&["eval", "--checkpoint", s(&ck_path), "--corpus", s(&tasks), "--out", s(&heat)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn policy_and_pac_reports() {
    let dir = TempDir::new().unwrap();
    let tasks = sample(&dir, "t.ndjson", &["--count", "3", "--alphabet-size", "5", "--seed", "3"]);
    let out = path(&dir, "p.csv");
    let o = run(&["policy", "--corpus", s(&tasks), "--out", s(&out), "--episodes", "2000", "--seeds", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&PathBuf::from(format!("{}.report.json", s(&out))));
    assert_eq!(report["value_tables_identical"], true);
    let optimal = report["optimal_success"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&optimal));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().next().unwrap(), "episode,seed_0,seed_1");

    let pac = path(&dir, "pac.csv");
    let o = run(&["pac", "--task", s(&tasks), "--out", s(&pac), "--budgets", "1000,2000", "--seeds", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&PathBuf::from(format!("{}.report.json", s(&pac))));
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    assert_eq!(code(&run(&["pac", "--task", s(&tasks), "--task-index", "9", "--out", s(&pac)])), 1);
}

#[test]
fn eval_reports_separation_per_corpus() {
    let dir = TempDir::new().unwrap();
    let train_corpus = sample(&dir, "train.ndjson", &["--kind", "rad", "--count", "3", "--alphabet-size", "3"]);
    let ck = path(&dir, "mp.json");
    let o = run(&["train", "--corpus", s(&train_corpus), "--out", s(&ck), "--mode", "message-passing", "--epochs", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let reach = sample(&dir, "r.ndjson", &["--kind", "reach", "--count", "6", "--alphabet-size", "3", "--seed", "5"]);
    let heat = path(&dir, "heat.csv");
    let o = run(&["eval", "--checkpoint", s(&ck), "--corpus", s(&train_corpus), "--corpus", s(&reach), "--out", s(&heat)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&heat).unwrap();
    assert_eq!(text.lines().count(), 10);
    let report = read_json(&PathBuf::from(format!("{}.report.json", s(&heat))));
    assert_eq!(report["diagonal_zero"], true);
}
