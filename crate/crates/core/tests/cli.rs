//! Runs the `fedexchange` binary against small configs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedexchange::harness::{ExperimentConfig, RunSummary};
use fedexchange::server::Strategy;

fn small_config(dir: &Path) -> PathBuf {
    let mut cfg = ExperimentConfig::default_setup();
    cfg.rounds = 4;
    cfg.warmup_rounds = 1;
    cfg.seeds = vec![0, 1, 2];
    cfg.input_dim = 4;
    cfg.feature_dim = 8;
    for d in &mut cfg.domains {
        d.sample_count = 100;
        d.test_count = 50;
        d.input_dim = 4;
        d.feature_shift.truncate(4);
    }
    cfg.local.epochs = 1;
    cfg.output_dir = dir.join("out");
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn fedexchange(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedexchange")).args(args).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn files_named(dir: &Path, name: &str) -> Vec<PathBuf> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            found.extend(files_named(&path, name));
        } else if path.file_name().is_some_and(|n| n == name) {
            found.push(path);
        }
    }
    found.sort();
    found
}

#[test]
fn run_writes_every_cell_and_a_comparison() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let out = tmp.path().join("out");
    ok(fedexchange(&["run", "--config", config.to_str().unwrap()]));

    let csvs = files_named(&out, "metrics.csv");
    assert_eq!(csvs.len(), 6);
    assert_eq!(files_named(&out, "summary.json").len(), 6);
    assert!(out.join("comparison.json").is_file());
    assert!(out.join("comparison.txt").is_file());
    assert!(out.join("clustered/T2/frac1/seed0/metrics.csv").is_file());

    let header = fs::read_to_string(&csvs[0]).unwrap();
    let mut lines = header.lines();
    assert_eq!(
        lines.next().unwrap(),
        "round,decision,domain_0_loss,domain_1_loss,domain_2_loss,domain_3_loss,avg_loss,std_loss"
    );
    assert_eq!(lines.count(), 5);

    let first: Vec<String> = csvs.iter().map(|p| fs::read_to_string(p).unwrap()).collect();
    ok(fedexchange(&["run", "--config", config.to_str().unwrap()]));
    let second: Vec<String> = csvs.iter().map(|p| fs::read_to_string(p).unwrap()).collect();
    assert_eq!(first, second);

    let table = ok(fedexchange(&["compare", "--in", out.to_str().unwrap()]));
    assert!(table.contains("clustered") && table.contains("fedavg_only"));
}

#[test]
fn overrides_select_a_single_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let out = tmp.path().join("single");
    ok(fedexchange(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "7",
        "--strategy",
        "round_robin",
        "--data-fraction",
        "0.1",
        "--out",
        out.to_str().unwrap(),
    ]));
    let summaries = files_named(&out, "summary.json");
    assert_eq!(summaries.len(), 1);
    let summary: RunSummary = serde_json::from_str(&fs::read_to_string(&summaries[0]).unwrap()).unwrap();
    assert_eq!(summary.strategy, Strategy::RoundRobin);
    assert_eq!(summary.seed, 7);
    assert_eq!(summary.train_sizes, vec![10; 4]);
    assert!(!out.join("comparison.json").exists());
}

#[test]
fn ablate_t_validates_and_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let config = config.to_str().unwrap();

    let bad = fedexchange(&["ablate-t", "--config", config, "--t-values", "2,3"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("T = 3"));

    let text = ok(fedexchange(&["ablate-t", "--config", config, "--t-values", "1,2,4", "--seed", "0"]));
    assert_eq!(text.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).count(), 3);
    assert!(tmp.path().join("out/ablate_t/ablation_t.json").is_file());
}

#[test]
fn invalid_config_fails_with_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let out = fedexchange(&["run", "--config", config.to_str().unwrap(), "--agg-frequency", "3"]);
    assert_eq!(out.status.code(), Some(2));
    let missing = fedexchange(&["run", "--config", tmp.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn export_data_writes_every_split() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let csv = tmp.path().join("data/all.csv");
    ok(fedexchange(&["export-data", "--config", config.to_str().unwrap(), "--out", csv.to_str().unwrap()]));
    let text = fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("domain_id,split,x_0,x_1,x_2,x_3,label"));
    assert_eq!(text.lines().count(), 1 + 4 * (100 + 50));
}
