//! End-to-end runs through the library and the CLI binary.

use std::process::Command;

use ris_ee_harness::config::{ExperimentConfig, Profile};
use ris_ee_harness::output::{write_sweep_csv, write_trials_csv, SWEEP_COLUMNS};
use ris_ee_harness::sweep::{sweep, Axis};
use ris_ee_harness::trials::run_trials;

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::profile(Profile::Desk);
    cfg.dims.n_ris = 8;
    cfg.trials = 4;
    cfg.starts = 2;
    cfg
}

fn trials_csv(cfg: &ExperimentConfig) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trials_csv(&mut buf, &run_trials(cfg).unwrap()).unwrap();
    buf
}

#[test]
fn same_seed_same_bytes() {
    let cfg = small();
    assert_eq!(trials_csv(&cfg), trials_csv(&cfg));
    let mut other = cfg.clone();
    other.seed = 99;
    assert_ne!(trials_csv(&cfg), trials_csv(&other));
}

#[test]
fn one_trial_is_one_multistart_solve() {
    let mut cfg = small();
    cfg.trials = 1;
    let set = run_trials(&cfg).unwrap();
    assert_eq!(set.results.len(), 1);
    let r = &set.results[0];
    assert_eq!(set.aggregate.ee_lb.mean, r.ee_lb);
    assert_eq!(set.aggregate.ee_lb.se, 0.0);
}

#[test]
fn aggregates_recompute_from_csv() {
    let cfg = small();
    let bytes = trials_csv(&cfg);
    let mut rd = csv::Reader::from_reader(bytes.as_slice());
    let ee: Vec<f64> = rd.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    let mean = ee.iter().sum::<f64>() / ee.len() as f64;
    let agg = run_trials(&cfg).unwrap().aggregate;
    assert!((agg.ee_lb.mean - mean).abs() <= 1e-12 * mean.abs());
}

#[test]
fn sweep_table_has_one_row_per_point() {
    let mut cfg = small();
    cfg.trials = 2;
    cfg.sweep.rho = vec![0.5, 0.9];
    let table = sweep(&cfg, Axis::Rho).unwrap();
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &table).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], SWEEP_COLUMNS.join(","));
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("rho,0.5,2,0,"));
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ris-ee"))
}

#[test]
fn cli_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, r#"{"dims": {"n_ris": 8}, "trials": 2, "starts": 1}"#).unwrap();
    let out = dir.path().join("out");
    let status = cli()
        .args(["--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3", "trials"])
        .output()
        .unwrap();
    assert!(status.status.code() == Some(0) || status.status.code() == Some(2), "{status:?}");
    let first = std::fs::read(out.join("trials.csv")).unwrap();
    let side: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("trials.json")).unwrap()).unwrap();
    assert_eq!(side["seed"], 3);
    assert_eq!(side["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(side["trial_wall_times_s"].as_array().unwrap().len(), 2);

    cli().args(["--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3", "trials"]).output().unwrap();
    assert_eq!(std::fs::read(out.join("trials.csv")).unwrap(), first);
}

#[test]
fn cli_rejects_bad_config_with_code_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, r#"{"beta": 2.0}"#).unwrap();
    let status = cli().args(["--config", cfg_path.to_str().unwrap(), "solve"]).output().unwrap();
    assert_eq!(status.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&status.stderr).contains("beta"));
}

#[test]
fn cli_reports_unmet_majority_with_code_2() {
    // Perfect fairness with a single outer round and few sweeps cannot be
    // reached from a random start.
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(
        &cfg_path,
        r#"{"dims": {"n_ris": 8}, "fairness": {"rho": 1.0}, "solver": {"max_outer": 1, "max_inner": 2}, "trials": 3, "starts": 1}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = cli().args(["--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap(), "trials"]).output().unwrap();
    assert_eq!(status.status.code(), Some(2), "{status:?}");
}
