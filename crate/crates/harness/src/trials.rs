//! Monte Carlo trials.
//!
//! Trial `t` derives all of its randomness (user positions, QoS weights,
//! fading, CSI error, solver starts) from `trial_seed(cfg.seed, t)`, so the
//! same trial sees the same draws at every grid point of a sweep.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use ris_ee_core::channel::{apply_csi_error_with, synthesize_channels};
use ris_ee_core::objectives::true_ee;
use ris_ee_core::solver::{multistart, MultistartOutcome, FAIRNESS_TOLERANCE};
use ris_ee_core::{ChannelRealization, FairnessSpec, PowerModel, SolveStatus};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::Result;

/// SplitMix64 step; decorrelates consecutive trial indices.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    let mut z = seed.wrapping_add((trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything a trial needs besides the solver settings.
#[derive(Debug, Clone)]
pub struct Instance {
    pub channel: ChannelRealization,
    pub power: PowerModel,
    pub spec: FairnessSpec,
    /// Seed handed to the multistart solver.
    pub solve_seed: u64,
}

pub fn build_instance(cfg: &ExperimentConfig, trial: usize) -> Result<Instance> {
    let dims = cfg.dims.build();
    let seed = trial_seed(cfg.seed, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ues = cfg.geometry.sample_ue_positions(dims.k, &mut rng);
    let [lo, hi] = cfg.fairness.weight_range;
    let weights = (0..dims.k).map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo }).collect();
    let fading_seed: u64 = rng.random();
    let error_seed: u64 = rng.random();
    let solve_seed: u64 = rng.random();
    let ch = synthesize_channels(&dims, &cfg.geometry, &cfg.paths, &ues, fading_seed)?;
    let channel = apply_csi_error_with(&ch, cfg.beta, error_seed, cfg.error_sampling)?;
    Ok(Instance {
        channel,
        power: cfg.power.build(dims.k),
        spec: FairnessSpec::new(cfg.fairness.rho, weights),
        solve_seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    /// Lower-bound energy efficiency of the design, Mbit/J.
    pub ee_lb: f64,
    /// Energy efficiency of the design over the true channel, Mbit/J.
    pub true_ee: f64,
    pub jain: f64,
    pub constraint_met: bool,
    pub iterations: usize,
    pub outer_rounds: usize,
    pub best_start: usize,
    /// True energy efficiency of the design made assuming the estimate is
    /// exact (CSI sweeps only).
    pub perfect_csi_true_ee: Option<f64>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// A trial that could not be solved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub seed: u64,
    pub error: String,
}

pub fn solve_instance(cfg: &ExperimentConfig, inst: &Instance, trial: usize) -> Result<TrialResult> {
    solve_instance_with_outcome(cfg, inst, trial).map(|(r, _)| r)
}

/// As [`solve_instance`], also returning the solver output.
pub fn solve_instance_with_outcome(cfg: &ExperimentConfig, inst: &Instance, trial: usize) -> Result<(TrialResult, MultistartOutcome)> {
    let start = Instant::now();
    let out = multistart(&inst.channel, &inst.power, &inst.spec, &cfg.solver.build(), cfg.starts, inst.solve_seed)?;
    let best = &out.best;
    let true_ee = true_ee(&best.vars, &inst.channel, &inst.power)?;
    let jain = best.evaluation.jain;
    let r = TrialResult {
        trial,
        seed: trial_seed(cfg.seed, trial),
        ee_lb: best.evaluation.ee,
        true_ee,
        jain,
        constraint_met: best.status == SolveStatus::ConstraintSatisfied,
        iterations: best.trace.len(),
        outer_rounds: best.trace.outer_starts.len(),
        best_start: out.best_start,
        perfect_csi_true_ee: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((r, out))
}

pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialResult> {
    let inst = build_instance(cfg, trial)?;
    solve_instance(cfg, &inst, trial)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub completed: usize,
    pub failed: usize,
    pub ee_lb: MeanSe,
    pub true_ee: MeanSe,
    pub jain: MeanSe,
    /// Fraction of completed trials that met the fairness target.
    pub satisfaction_rate: f64,
}

impl Aggregate {
    pub fn of(results: &[TrialResult], failed: usize) -> Self {
        let col = |f: fn(&TrialResult) -> f64| results.iter().map(f).collect::<Vec<_>>();
        let met = results.iter().filter(|r| r.constraint_met).count();
        Self {
            completed: results.len(),
            failed,
            ee_lb: MeanSe::of(&col(|r| r.ee_lb)),
            true_ee: MeanSe::of(&col(|r| r.true_ee)),
            jain: MeanSe::of(&col(|r| r.jain)),
            satisfaction_rate: if results.is_empty() { 0.0 } else { met as f64 / results.len() as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSet {
    pub results: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
    pub aggregate: Aggregate,
}

impl TrialSet {
    /// True when more than half of the completed trials missed the fairness
    /// target.
    pub fn majority_unmet(&self) -> bool {
        let unmet = self.results.iter().filter(|r| !r.constraint_met).count();
        2 * unmet > self.results.len()
    }
}

/// Collects per-trial outcomes in trial order.
pub fn collect(outcomes: Vec<(usize, Result<TrialResult>)>, cfg: &ExperimentConfig) -> TrialSet {
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (trial, r) in outcomes {
        match r {
            Ok(r) => results.push(r),
            Err(e) => failures.push(TrialFailure { trial, seed: trial_seed(cfg.seed, trial), error: e.to_string() }),
        }
    }
    let aggregate = Aggregate::of(&results, failures.len());
    TrialSet { results, failures, aggregate }
}

/// Runs `cfg.trials` independent trials in parallel.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<TrialSet> {
    cfg.validate()?;
    let outcomes = (0..cfg.trials).into_par_iter().map(|t| (t, run_trial(cfg, t))).collect();
    Ok(collect(outcomes, cfg))
}

/// True when the reported flag agrees with the Jain index.
pub fn flag_consistent(r: &TrialResult, rho: f64) -> bool {
    r.constraint_met == (r.jain >= rho - FAIRNESS_TOLERANCE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::profile(Profile::Desk);
        cfg.dims.n_ris = 8;
        cfg.trials = 3;
        cfg.starts = 2;
        cfg.solver.max_inner = 40;
        cfg
    }

    #[test]
    fn trial_seeds_differ_and_repeat() {
        assert_ne!(trial_seed(1, 0), trial_seed(1, 1));
        assert_ne!(trial_seed(1, 0), trial_seed(2, 0));
        assert_eq!(trial_seed(7, 3), trial_seed(7, 3));
    }

    #[test]
    fn instances_are_reproducible() {
        let cfg = tiny_cfg();
        let a = build_instance(&cfg, 1).unwrap();
        let b = build_instance(&cfg, 1).unwrap();
        assert_eq!(a.channel, b.channel);
        assert_eq!(a.spec, b.spec);
        assert!(a.spec.weights.iter().all(|w| (1.0..5.0).contains(w)));
        let c = build_instance(&cfg, 2).unwrap();
        assert_ne!(a.channel.h_t, c.channel.h_t);
    }

    #[test]
    fn run_trials_reports_consistent_rows() {
        let cfg = tiny_cfg();
        let set = run_trials(&cfg).unwrap();
        assert_eq!(set.results.len() + set.failures.len(), 3);
        for r in &set.results {
            assert!(r.ee_lb.is_finite() && r.true_ee.is_finite() && r.jain.is_finite());
            assert!(flag_consistent(r, cfg.fairness.rho));
        }
        let mean = set.results.iter().map(|r| r.ee_lb).sum::<f64>() / set.results.len() as f64;
        assert!((set.aggregate.ee_lb.mean - mean).abs() <= 1e-12 * mean.abs());
        assert!(set.aggregate.ee_lb.mean > 0.0);
    }

    #[test]
    fn mean_and_standard_error() {
        let m = MeanSe::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
