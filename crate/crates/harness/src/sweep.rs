//! One-dimensional parameter sweeps over trials with common random numbers.

use rayon::prelude::*;
use ris_ee_core::objectives::true_ee;
use ris_ee_core::solver::multistart;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::trials::{build_instance, collect, solve_instance, Aggregate, TrialResult, TrialSet};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Fairness target.
    Rho,
    /// CSI error fraction.
    Beta,
    /// Transmit budget in dBm.
    Pmax,
    /// Number of RIS elements.
    Nris,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Rho => "rho",
            Axis::Beta => "beta",
            Axis::Pmax => "pmax_dbm",
            Axis::Nris => "nris",
        }
    }

    pub fn grid(self, cfg: &ExperimentConfig) -> Vec<f64> {
        match self {
            Axis::Rho => cfg.sweep.rho.clone(),
            Axis::Beta => cfg.sweep.beta.clone(),
            Axis::Pmax => cfg.sweep.pmax_dbm.clone(),
            Axis::Nris => cfg.sweep.nris.iter().map(|&n| n as f64).collect(),
        }
    }

    /// `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> ExperimentConfig {
        let mut out = cfg.clone();
        match self {
            Axis::Rho => out.fairness.rho = value,
            Axis::Beta => out.beta = value,
            Axis::Pmax => out.power.p_max_dbm = value,
            Axis::Nris => out.dims.n_ris = value as usize,
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub trials: TrialSet,
    /// Mean true EE of designs made assuming the estimate is exact (beta
    /// axis only).
    pub perfect_csi_true_ee: Option<f64>,
}

impl SweepPoint {
    pub fn aggregate(&self) -> &Aggregate {
        &self.trials.aggregate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub axis: Axis,
    pub points: Vec<SweepPoint>,
}

/// Robust design plus, for the beta axis, a second design made on the same
/// estimate with a zero error radius, both scored on the true channel.
fn run_point_trial(cfg: &ExperimentConfig, axis: Axis, trial: usize) -> Result<TrialResult> {
    let inst = build_instance(cfg, trial)?;
    let mut r = solve_instance(cfg, &inst, trial)?;
    if axis == Axis::Beta {
        let naive = inst.channel.assume_perfect();
        let out = multistart(&naive, &inst.power, &inst.spec, &cfg.solver.build(), cfg.starts, inst.solve_seed)?;
        r.perfect_csi_true_ee = Some(true_ee(&out.best.vars, &inst.channel, &inst.power)?);
    }
    Ok(r)
}

pub fn sweep_point(cfg: &ExperimentConfig, axis: Axis, value: f64) -> Result<SweepPoint> {
    let pcfg = axis.apply(cfg, value);
    pcfg.validate()?;
    let outcomes = (0..pcfg.trials).into_par_iter().map(|t| (t, run_point_trial(&pcfg, axis, t))).collect();
    let trials = collect(outcomes, &pcfg);
    let perfect_csi_true_ee = (axis == Axis::Beta).then(|| {
        let v: Vec<f64> = trials.results.iter().filter_map(|r| r.perfect_csi_true_ee).collect();
        v.iter().sum::<f64>() / v.len() as f64
    });
    Ok(SweepPoint { value, trials, perfect_csi_true_ee })
}

/// Runs every grid point of `axis`; trial `t` uses the same seed at every
/// point.
pub fn sweep(cfg: &ExperimentConfig, axis: Axis) -> Result<SweepTable> {
    cfg.validate()?;
    let points = axis.grid(cfg).into_iter().map(|v| sweep_point(cfg, axis, v)).collect::<Result<_>>()?;
    Ok(SweepTable { axis, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::profile(Profile::Desk);
        cfg.dims.n_ris = 8;
        cfg.trials = 2;
        cfg.starts = 1;
        cfg.solver.max_inner = 30;
        cfg
    }

    #[test]
    fn vacuous_fairness_is_always_met() {
        let cfg = tiny_cfg();
        let p = sweep_point(&cfg, Axis::Rho, 1.0 / cfg.dims.k as f64).unwrap();
        assert_eq!(p.aggregate().satisfaction_rate, 1.0);
    }

    #[test]
    fn csi_curves_coincide_without_error() {
        let cfg = tiny_cfg();
        let p = sweep_point(&cfg, Axis::Beta, 0.0).unwrap();
        for r in &p.trials.results {
            assert!((r.true_ee - r.ee_lb).abs() <= 1e-9 * r.ee_lb);
            assert!((r.perfect_csi_true_ee.unwrap() - r.true_ee).abs() <= 1e-9 * r.true_ee);
        }
    }

    #[test]
    fn axis_application() {
        let cfg = tiny_cfg();
        assert_eq!(Axis::Nris.apply(&cfg, 32.0).dims.n_ris, 32);
        assert_eq!(Axis::Pmax.apply(&cfg, 20.0).power.p_max_dbm, 20.0);
        assert_eq!(Axis::Beta.grid(&cfg), vec![0.0, 0.05, 0.1, 0.2]);
    }
}
