use std::path::Path;
use std::process::{Command, Output};

use dynrank::data::SyntheticProfile;
use dynrank::harness::{config_diff, DatasetSpec, RunConfig, RunReport};
use tempfile::TempDir;

fn tiny(out: &Path) -> RunConfig {
    let mut c = RunConfig::desk(out);
    c.dataset = DatasetSpec::Synthetic {
        topics: 4,
        docs_per_topic: 20,
        subtopics: 2,
        dim: 8,
        seed: 1,
        profile: SyntheticProfile::default(),
    };
    c.net = dynrank::valuenet::NetConfig {
        layers: 1,
        hidden_dim: 4,
        head_widths: vec![4],
        ..dynrank::valuenet::NetConfig::full(8)
    };
    c.policy.max_epochs = 1;
    c.policy.min_epochs = 1;
    c.policy.iterations = 3;
    c.policy.docs_per_iteration = 2;
    c.folds = 2;
    c.baseline_permutations = 2;
    c
}

fn write_config(dir: &Path, c: &RunConfig) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, c.to_json()).unwrap();
    p
}

fn dynrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynrank")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_then_evaluate_writes_fixed_tables() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), &tiny(&out));
    let o = dynrank(&["train", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("default\tfinal alpha-ndcg "));

    let eval = std::fs::read_to_string(out.join("evaluation.csv")).unwrap();
    assert_eq!(eval.lines().next(), Some("iteration,metric_name,mean,stddev"));
    let folds = std::fs::read_to_string(out.join("folds.csv")).unwrap();
    // folds x iterations x report metrics
    assert_eq!(folds.lines().count() - 1, 2 * 3 * 3);
    for f in 0..2 {
        assert!(out.join(format!("fold{f}/model.ckpt")).is_file());
    }

    let o = dynrank(&["evaluate", "--config", s(&cfg), "--metric", "ndcg"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("final ndcg"));

    // Scoring the written run file offline.
    let runs = out.join("runs.jsonl");
    let o = dynrank(&["metrics", "--config", s(&cfg), "--run", s(&runs), "--out", s(&dir.path().join("m"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), &tiny(&out));

    let o = dynrank(&["train", "--config", s(&dir.path().join("missing.json"))]);
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(dir.path().join("bad.json"), "{\"folds\": 2}").unwrap();
    let o = dynrank(&["train", "--config", s(&dir.path().join("bad.json"))]);
    assert_eq!(o.status.code(), Some(2));

    let o = dynrank(&["train", "--config", s(&cfg), "--folds", "1"]);
    assert_eq!(o.status.code(), Some(2));

    // No checkpoints yet.
    let o = dynrank(&["evaluate", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    std::fs::write(dir.path().join("runs.jsonl"), "not json\n").unwrap();
    let o = dynrank(&["metrics", "--config", s(&cfg), "--run", s(&dir.path().join("runs.jsonl"))]);
    assert_eq!(o.status.code(), Some(3));

    // The output directory is a regular file.
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = dynrank(&["train", "--config", s(&cfg), "--out", s(&blocker)]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!o.stderr.is_empty());
}

#[test]
fn ablation_arms_differ_only_in_feedback() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("ab");
    let cfg = write_config(dir.path(), &tiny(&out));
    let o = dynrank(&["ablate", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = RunReport::from_json(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let names: Vec<&str> = report.variants.iter().map(|v| v.name.as_str()).collect();
    assert_eq!(names, ["embed-rocchio", "classic-rocchio", "nqe", "no-feedback"]);
    for v in &report.variants[1..] {
        assert_eq!(config_diff(&report.variants[0].config, &v.config), ["feedback.mode"]);
        assert!(out.join(&v.name).join("evaluation.csv").is_file());
    }
}

#[test]
fn config_echo_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("a");
    let cfg = write_config(dir.path(), &tiny(&out));
    assert!(dynrank(&["train", "--config", s(&cfg), "--seed", "5", "--layers", "2"]).status.success());
    let first = RunReport::from_json(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(first.config.seed, 5);
    assert_eq!(first.config.net.layers, 2);

    let mut echo = first.config.clone();
    echo.out_dir = dir.path().join("b");
    let echo_path = dir.path().join("echo.json");
    std::fs::write(&echo_path, echo.to_json()).unwrap();
    assert!(dynrank(&["train", "--config", s(&echo_path)]).status.success());
    let a = std::fs::read(out.join("evaluation.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/evaluation.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sweep_reports_every_depth() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sw");
    let cfg = write_config(dir.path(), &tiny(&out));
    let o = dynrank(&["sweep-layers", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for j in 1..=4 {
        assert!(stdout.contains(&format!("layers-{j}\tfinal")), "{stdout}");
    }
}
