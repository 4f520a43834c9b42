//! CSV tables and JSON sidecars.
//!
//! CSV columns come in a fixed order and carry nothing that varies between
//! runs of the same config and seed, so reruns produce identical bytes.
//! Wall-clock times go to the sidecar only.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checks::ConvergenceReport;
use crate::config::ExperimentConfig;
use crate::sweep::SweepTable;
use crate::trials::{TrialFailure, TrialSet};
use crate::Result;

pub const TRIAL_COLUMNS: [&str; 10] = [
    "trial",
    "seed",
    "ee_lb",
    "true_ee",
    "jain",
    "constraint_met",
    "iterations",
    "outer_rounds",
    "best_start",
    "perfect_csi_true_ee",
];

pub const SWEEP_COLUMNS: [&str; 11] = [
    "axis",
    "value",
    "completed",
    "failed",
    "ee_lb_mean",
    "ee_lb_se",
    "true_ee_mean",
    "true_ee_se",
    "jain_mean",
    "satisfaction_rate",
    "perfect_csi_true_ee",
];

pub const CONVERGENCE_COLUMNS: [&str; 9] =
    ["start", "iteration", "outer", "inner", "lagrangian", "ee_lb", "penalty", "mu", "jain"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trials_csv<W: Write>(w: W, set: &TrialSet) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRIAL_COLUMNS)?;
    for r in &set.results {
        out.write_record([
            r.trial.to_string(),
            r.seed.to_string(),
            r.ee_lb.to_string(),
            r.true_ee.to_string(),
            r.jain.to_string(),
            r.constraint_met.to_string(),
            r.iterations.to_string(),
            r.outer_rounds.to_string(),
            r.best_start.to_string(),
            opt(r.perfect_csi_true_ee),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(w: W, table: &SweepTable) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_COLUMNS)?;
    for p in &table.points {
        let a = p.aggregate();
        out.write_record([
            table.axis.name().to_string(),
            p.value.to_string(),
            a.completed.to_string(),
            a.failed.to_string(),
            a.ee_lb.mean.to_string(),
            a.ee_lb.se.to_string(),
            a.true_ee.mean.to_string(),
            a.true_ee.se.to_string(),
            a.jain.mean.to_string(),
            a.satisfaction_rate.to_string(),
            opt(p.perfect_csi_true_ee),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_convergence_csv<W: Write>(w: W, report: &ConvergenceReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CONVERGENCE_COLUMNS)?;
    for r in &report.rows {
        out.write_record([
            r.start.to_string(),
            r.iteration.to_string(),
            r.outer.to_string(),
            r.inner.to_string(),
            r.lagrangian.to_string(),
            r.ee_lb.to_string(),
            r.penalty.to_string(),
            r.mu.to_string(),
            r.jain.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// SHA-256 of the canonical JSON form of `cfg`, hex encoded.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_json().as_bytes()))
}

/// Run metadata written next to each CSV.
#[derive(Debug, Clone, Serialize)]
pub struct Sidecar {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub total_wall_time_s: f64,
    /// Per-trial wall time in trial order, where applicable.
    pub trial_wall_times_s: Vec<f64>,
    pub failures: Vec<TrialFailure>,
    /// Command-specific summary.
    pub summary: serde_json::Value,
}

impl Sidecar {
    pub fn new(command: &str, cfg: &ExperimentConfig, total_wall_time_s: f64) -> Self {
        Self {
            command: command.into(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            config: cfg.clone(),
            total_wall_time_s,
            trial_wall_times_s: Vec::new(),
            failures: Vec::new(),
            summary: serde_json::Value::Null,
        }
    }

    pub fn with_trials(mut self, set: &TrialSet) -> Self {
        self.trial_wall_times_s = set.results.iter().map(|r| r.wall_time_s).collect();
        self.failures.extend(set.failures.iter().cloned());
        self
    }
}

/// Writes `<stem>.csv` through `write` and `<stem>.json` from `sidecar`
/// under `dir`, returning both paths.
pub fn write_pair(
    dir: &Path,
    stem: &str,
    write: impl FnOnce(fs::File) -> Result<()>,
    sidecar: &Sidecar,
) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    write(fs::File::create(&csv_path)?)?;
    fs::write(&json_path, serde_json::to_string_pretty(sidecar)?)?;
    Ok((csv_path, json_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;
    use crate::trials::{collect, TrialResult};

    fn row(trial: usize, wall: f64) -> TrialResult {
        TrialResult {
            trial,
            seed: 42,
            ee_lb: 1.5,
            true_ee: 2.25,
            jain: 0.8,
            constraint_met: true,
            iterations: 10,
            outer_rounds: 1,
            best_start: 0,
            perfect_csi_true_ee: None,
            wall_time_s: wall,
        }
    }

    #[test]
    fn trial_csv_ignores_wall_time() {
        let cfg = ExperimentConfig::profile(Profile::Desk);
        let a = collect(vec![(0, Ok(row(0, 1.0)))], &cfg);
        let b = collect(vec![(0, Ok(row(0, 9.0)))], &cfg);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_trials_csv(&mut x, &a).unwrap();
        write_trials_csv(&mut y, &b).unwrap();
        assert_eq!(x, y);
        let text = String::from_utf8(x).unwrap();
        assert_eq!(text.lines().next().unwrap(), TRIAL_COLUMNS.join(","));
        assert_eq!(text.lines().nth(1).unwrap(), "0,42,1.5,2.25,0.8,true,10,1,0,");
    }

    #[test]
    fn hash_tracks_config() {
        let a = ExperimentConfig::profile(Profile::Desk);
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.seed = 2;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
