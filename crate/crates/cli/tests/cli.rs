use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use gramflow::cli_io::{holdout_split, write_csv};
use gramflow::synth::Blobs;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn gramflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gramflow")).args(args).output().expect("binary runs")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&out.stderr)))
}

fn grammar_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/grammars/workflow.bnf")
}

/// Writes a 100-row synthetic train/test pair and a small config.
fn setup(dir: &Path) -> PathBuf {
    let d = Blobs { n_samples: 100, n_classes: 3, n_noise: 3, radius: 3.0 }.generate(12);
    let (train, test) = holdout_split(&d, 0.3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    write_csv(&train, &dir.join("train.csv"), "label").unwrap();
    write_csv(&test, &dir.join("test.csv"), "label").unwrap();
    let config = dir.join("run.json");
    fs::write(
        &config,
        r#"{"maxGen": 2, "popSize": 10, "budget": 120, "evalBudget": 30, "seed": 1,
            "train": "train.csv", "test": "test.csv", "labelColumn": "label", "outputDir": "out"}"#,
    )
    .unwrap();
    config
}

#[test]
fn validate_shipped_grammar() {
    let out = gramflow(&["validate-grammar", "--grammar", grammar_path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["ok"], true);
    assert_eq!(v["issues"].as_array().unwrap().len(), 0);
}

#[test]
fn validate_reports_issues_and_syntax_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.bnf");
    fs::write(&bad, "%structural <workflow>\n<workflow> ::= kNN nNeighbors | <missing>\n").unwrap();
    let out = gramflow(&["validate-grammar", "--grammar", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["ok"], false);
    assert!(v["issues"].as_array().unwrap().len() >= 2, "{v}");

    fs::write(&bad, "<workflow> ::= \n").unwrap();
    let out = gramflow(&["validate-grammar", "--grammar", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "grammar");
}

#[test]
fn optimize_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let start = Instant::now();
    let out = gramflow(&["optimize", "--config", config.to_str().unwrap(), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed() < Duration::from_secs(30));

    let out_dir = dir.path().join("out");
    for f in ["report.json", "ensemble.json", "generations.csv"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 3);
    assert_eq!(report["config"]["popSize"], 10);
    assert_eq!(report["config"]["cxProb"], 0.8);
    assert_eq!(report["data"]["test_source"], "file");
    let generations = fs::read_to_string(out_dir.join("generations.csv")).unwrap();
    assert!(generations.starts_with("gen,best_fit,mean_fit,archive_min_divfit\n"));

    let out = gramflow(&[
        "evaluate",
        "--ensemble",
        out_dir.join("ensemble.json").to_str().unwrap(),
        "--data",
        dir.path().join("test.csv").to_str().unwrap(),
        "--label",
        "label",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["metric"], "balanced_accuracy");
    let value = v["value"].as_f64().unwrap();
    let reported = report["test"]["balanced_accuracy"].as_f64().unwrap();
    assert!((value - reported).abs() <= 1e-12);
}

#[test]
fn ablate_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let out = gramflow(&["ablate", "--config", config.to_str().unwrap(), "--modes", "full,basic", "--seeds", "1..2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("out/ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.starts_with("mode,seed,test_balanced_accuracy"));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["checks"].as_array().unwrap().len(), 1);
}

#[test]
fn errors_are_json_with_nonzero_exit() {
    let out = gramflow(&["optimize", "--config", "/does/not/exist.json"]);
    assert_eq!(out.status.code(), Some(3));
    let v = stderr_json(&out);
    assert_eq!(v["error"], "config");
    assert!(v["message"].as_str().unwrap().contains("exist.json"));

    let out = gramflow(&["optimize", "--config", "x.json", "--mode", "turbo"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    fs::write(&data, "a,label\n1,x\n,y\n").unwrap();
    let ens = dir.path().join("e.json");
    fs::write(&ens, r#"{"format_version": 99}"#).unwrap();
    let out = gramflow(&["evaluate", "--ensemble", ens.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"], "format");
}
