//! Oracle runs over random small instances and the convergence report.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use ris_ee_core::channel::{apply_csi_error, synthesize_channels};
use ris_ee_core::gradients::Block;
use ris_ee_core::solver::{solve, start_seed, Init};
use ris_ee_core::verification::{bound_dominance_check, fd_gradient_check, signal_adversary_check, FdTarget, OracleReport};
use ris_ee_core::{ChannelRealization, DesignVariables, FairnessSpec, PowerModel, SolveStatus, SystemDims};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::trials::{build_instance, trial_seed};
use crate::Result;

/// Small instance used by the oracles: two single-stream users, two
/// subarrays of two antennas, four RIS elements, two receive antennas.
pub fn oracle_dims() -> SystemDims {
    SystemDims::new(2, 2, 4, 2, 1, 2)
}

pub struct SmallInstance {
    pub channel: ChannelRealization,
    pub vars: DesignVariables,
    pub power: PowerModel,
    pub spec: FairnessSpec,
}

pub fn small_instance(cfg: &ExperimentConfig, index: usize) -> Result<SmallInstance> {
    let dims = oracle_dims();
    let seed = trial_seed(cfg.seed ^ 0x5EED_0F0A_C1E5, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ues = cfg.geometry.sample_ue_positions(dims.k, &mut rng);
    let ch = synthesize_channels(&dims, &cfg.geometry, &cfg.paths, &ues, seed)?;
    let channel = apply_csi_error(&ch, cfg.beta, seed.wrapping_add(1))?;
    let power = cfg.power.build(dims.k);
    let mut vars = DesignVariables::random_feasible(&dims, power.p_max, &mut rng);
    vars.mu = 0.25;
    let [lo, hi] = cfg.fairness.weight_range;
    let weights = (0..dims.k).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / dims.k as f64).collect();
    Ok(SmallInstance { channel, vars, power, spec: FairnessSpec::new(cfg.fairness.rho, weights) })
}

/// Targets covered by the gradient check on each instance.
pub fn fd_targets() -> Vec<FdTarget> {
    vec![
        FdTarget::Rate { k: 0, ell: 0 },
        FdTarget::Rate { k: 1, ell: 0 },
        FdTarget::Ee,
        FdTarget::Penalty,
        FdTarget::Lagrangian { gamma: 0.5, omega: 10.0 },
    ]
}

/// Finite-difference checks of every target and block on `n_instances`
/// small instances.
pub fn gradcheck(cfg: &ExperimentConfig, n_instances: usize, n_directions: usize, h: f64) -> Result<Vec<OracleReport>> {
    let per_instance: Vec<Result<Vec<OracleReport>>> = (0..n_instances)
        .into_par_iter()
        .map(|i| {
            let inst = small_instance(cfg, i)?;
            let mut out = Vec::new();
            for (t, target) in fd_targets().into_iter().enumerate() {
                for (b, block) in Block::ALL.into_iter().enumerate() {
                    let seed = trial_seed(i as u64, t * 4 + b);
                    let mut r = fd_gradient_check(target, block, &inst.vars, &inst.channel, &inst.power, &inst.spec, n_directions, h, seed)?;
                    r.instance = format!("#{i} {}", r.instance);
                    out.push(r);
                }
            }
            Ok(out)
        })
        .collect();
    let mut reports = Vec::new();
    for r in per_instance {
        reports.extend(r?);
    }
    Ok(reports)
}

/// Which design a bound check is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignPoint {
    /// A random feasible point.
    Random,
    /// The solver's output on the instance.
    Optimized,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub instance: usize,
    pub design: DesignPoint,
    pub sampled: OracleReport,
    pub adversary: OracleReport,
}

/// Bound dominance on `n_instances` small instances with `n_samples` error
/// draws each, at a random design and at the solver's design.
pub fn verify_bound(cfg: &ExperimentConfig, n_instances: usize, n_samples: usize) -> Result<Vec<BoundReport>> {
    let per_instance: Vec<Result<Vec<BoundReport>>> = (0..n_instances)
        .into_par_iter()
        .map(|i| {
            let inst = small_instance(cfg, i)?;
            let solved = solve(&inst.channel, &inst.power, &inst.spec, &cfg.solver.build(), Init::Seed(trial_seed(i as u64, 99)))?;
            let mut out = Vec::new();
            for (design, vars) in [(DesignPoint::Random, &inst.vars), (DesignPoint::Optimized, &solved.vars)] {
                let seed = trial_seed(cfg.seed, 1000 + i);
                out.push(BoundReport {
                    instance: i,
                    design,
                    sampled: bound_dominance_check(&inst.channel, vars, &inst.power, n_samples, seed)?,
                    adversary: signal_adversary_check(&inst.channel, vars, &inst.power)?,
                });
            }
            Ok(out)
        })
        .collect();
    let mut reports = Vec::new();
    for r in per_instance {
        reports.extend(r?);
    }
    Ok(reports)
}

/// One row per inner sweep of one start.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub start: usize,
    pub iteration: usize,
    pub outer: usize,
    pub inner: usize,
    pub lagrangian: f64,
    pub ee_lb: f64,
    pub penalty: f64,
    pub mu: f64,
    pub jain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartSummary {
    pub start: usize,
    pub status: SolveStatus,
    pub final_lagrangian: f64,
    pub final_ee_lb: f64,
    pub final_penalty: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub starts: Vec<StartSummary>,
}

/// Solves trial 0 of `cfg` from `n_starts` random points and records every
/// iterate.
pub fn convergence_report(cfg: &ExperimentConfig, n_starts: usize) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let inst = build_instance(cfg, 0)?;
    let state = cfg.solver.build();
    let runs: Vec<_> = (0..n_starts)
        .into_par_iter()
        .map(|s| solve(&inst.channel, &inst.power, &inst.spec, &state, Init::Seed(start_seed(inst.solve_seed, s))))
        .collect::<std::result::Result<_, _>>()?;
    let mut rows = Vec::new();
    let mut starts = Vec::new();
    for (s, run) in runs.iter().enumerate() {
        for (i, r) in run.trace.records.iter().enumerate() {
            rows.push(ConvergenceRow {
                start: s,
                iteration: i,
                outer: r.outer,
                inner: r.inner,
                lagrangian: r.lagrangian,
                ee_lb: r.ee_lb,
                penalty: r.penalty,
                mu: r.mu,
                jain: r.jain,
            });
        }
        let last = run.trace.last();
        starts.push(StartSummary {
            start: s,
            status: run.status,
            final_lagrangian: last.map_or(f64::NAN, |r| r.lagrangian),
            final_ee_lb: last.map_or(f64::NAN, |r| r.ee_lb),
            final_penalty: last.map_or(f64::NAN, |r| r.penalty),
            iterations: run.trace.len(),
        });
    }
    Ok(ConvergenceReport { rows, starts })
}
