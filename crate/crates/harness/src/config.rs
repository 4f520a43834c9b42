//! Experiment configuration: a versioned JSON document layered over a
//! built-in profile.

use std::path::Path;

use ris_ee_core::channel::ErrorSampling;
use ris_ee_core::units::{dbm_to_watts, dbw_to_watts};
use ris_ee_core::{Geometry, PathStats, PddState, PowerModel, SystemDims};
use ris_ee_core::solver::GammaUpdateMode;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full reference scale: 8 subarrays of 4 antennas, 64 RIS elements,
    /// 4 users with 2 streams and 4 receive antennas, 1000 trials.
    Paper,
    /// Reduced scale for a workstation: 4x2 antennas, 16 RIS elements,
    /// 3 single-stream users with 2 antennas, 50 trials.
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimsConfig {
    pub m: usize,
    pub n_t: usize,
    pub n_ris: usize,
    pub k: usize,
    pub l: usize,
    pub n_r: usize,
}

impl DimsConfig {
    pub fn build(&self) -> SystemDims {
        SystemDims::new(self.m, self.n_t, self.n_ris, self.k, self.l, self.n_r)
    }
}

/// Power constants in the units they are usually quoted in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerConfig {
    pub p_bs_dbw: f64,
    pub xi: f64,
    pub p_rf_t_dbm: f64,
    pub p_theta_dbm: f64,
    pub p_ue_dbm: f64,
    pub p_r_dbm: f64,
    pub p_max_dbm: f64,
    pub sigma2_dbm: f64,
    pub bandwidth_hz: f64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            p_bs_dbw: 9.0,
            xi: 1.2,
            p_rf_t_dbm: 1.0,
            p_theta_dbm: 1.0,
            p_ue_dbm: 5.0,
            p_r_dbm: 5.0,
            p_max_dbm: 40.0,
            sigma2_dbm: -37.0,
            bandwidth_hz: 200e6,
        }
    }
}

impl PowerConfig {
    pub fn build(&self, k: usize) -> PowerModel {
        PowerModel {
            p_bs: dbw_to_watts(self.p_bs_dbw),
            xi: self.xi,
            p_rf_t: dbm_to_watts(self.p_rf_t_dbm),
            p_theta: dbm_to_watts(self.p_theta_dbm),
            p_ue: vec![dbm_to_watts(self.p_ue_dbm); k],
            p_r: vec![dbm_to_watts(self.p_r_dbm); k],
            p_max: dbm_to_watts(self.p_max_dbm),
            sigma2: dbm_to_watts(self.sigma2_dbm),
            bandwidth_hz: self.bandwidth_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessConfig {
    pub rho: f64,
    /// QoS weights are drawn uniformly from this range per trial.
    pub weight_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub omega: f64,
    pub psi: f64,
    pub epsilon: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub gamma_mode: GammaUpdateMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = PddState::default();
        Self {
            omega: s.omega,
            psi: s.psi,
            epsilon: s.epsilon,
            max_inner: s.max_inner,
            max_outer: s.max_outer,
            gamma_mode: s.gamma_mode,
        }
    }
}

impl SolverConfig {
    pub fn build(&self) -> PddState {
        PddState {
            omega: self.omega,
            psi: self.psi,
            epsilon: self.epsilon,
            max_inner: self.max_inner,
            max_outer: self.max_outer,
            gamma_mode: self.gamma_mode,
            ..PddState::default()
        }
    }
}

/// Grids for the four sweep axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrids {
    pub rho: Vec<f64>,
    pub beta: Vec<f64>,
    pub pmax_dbm: Vec<f64>,
    pub nris: Vec<usize>,
}

impl Default for SweepGrids {
    fn default() -> Self {
        Self {
            rho: vec![0.25, 0.5, 0.75, 1.0],
            beta: vec![0.0, 0.05, 0.1, 0.2],
            pmax_dbm: vec![20.0, 30.0, 40.0, 50.0],
            nris: vec![4, 8, 16, 32, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub profile: Profile,
    pub dims: DimsConfig,
    pub geometry: Geometry,
    pub paths: PathStats,
    pub power: PowerConfig,
    pub fairness: FairnessConfig,
    /// CSI error radius as a fraction of the estimate norm.
    pub beta: f64,
    pub error_sampling: ErrorSampling,
    pub solver: SolverConfig,
    pub starts: usize,
    pub trials: usize,
    pub seed: u64,
    pub sweep: SweepGrids,
    pub output_dir: String,
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let (dims, trials) = match profile {
            Profile::Paper => (DimsConfig { m: 8, n_t: 4, n_ris: 64, k: 4, l: 2, n_r: 4 }, 1000),
            Profile::Desk => (DimsConfig { m: 4, n_t: 2, n_ris: 16, k: 3, l: 1, n_r: 2 }, 50),
        };
        Self {
            schema_version: SCHEMA_VERSION,
            profile,
            dims,
            geometry: Geometry::default(),
            paths: PathStats::default(),
            power: PowerConfig::default(),
            fairness: FairnessConfig { rho: 0.75, weight_range: [1.0, 5.0] },
            beta: 0.2,
            error_sampling: ErrorSampling::Uniform,
            solver: SolverConfig::default(),
            starts: 5,
            trials,
            seed: 1,
            sweep: SweepGrids::default(),
            output_dir: "out".into(),
        }
    }

    /// Parses a JSON document. Keys it omits keep the values of its
    /// `profile` (desk unless `fallback` says otherwise).
    pub fn from_json(text: &str, fallback: Profile) -> Result<Self> {
        let overlay: Value = serde_json::from_str(text)?;
        let profile = match overlay.get("profile") {
            Some(p) => serde_json::from_value(p.clone())?,
            None => fallback,
        };
        let mut base = serde_json::to_value(Self::profile(profile))?;
        merge(&mut base, overlay);
        let cfg: Self = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, fallback: Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, fallback)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        let dims = self.dims.build();
        dims.validate()?;
        self.geometry.validate()?;
        self.power.build(dims.k).validate(&dims)?;
        self.solver.build().validate()?;
        let [lo, hi] = self.fairness.weight_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("weight range [{lo}, {hi}]"));
        }
        if !(0.0..=1.0).contains(&self.fairness.rho) {
            return bad(format!("rho = {}", self.fairness.rho));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("beta = {}", self.beta));
        }
        if self.trials == 0 || self.starts == 0 {
            return bad("trials and starts must be at least 1".into());
        }
        let g = &self.sweep;
        if !sorted_nonempty(&g.rho) || !sorted_nonempty(&g.beta) || !sorted_nonempty(&g.pmax_dbm) {
            return bad("sweep grids must be nonempty and sorted".into());
        }
        if g.nris.is_empty() || g.nris.windows(2).any(|w| w[0] > w[1]) || g.nris.contains(&0) {
            return bad("RIS grid must be nonempty, sorted and positive".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn sorted_nonempty(v: &[f64]) -> bool {
    !v.is_empty() && v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[0] <= w[1])
}

/// Recursive object merge; non-object values in `overlay` replace `base`.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_profile() {
        let cfg = ExperimentConfig::from_json("{}", Profile::Desk).unwrap();
        assert_eq!(cfg, ExperimentConfig::profile(Profile::Desk));
        let cfg = ExperimentConfig::from_json(r#"{"profile": "paper"}"#, Profile::Desk).unwrap();
        assert_eq!(cfg.dims.n_ris, 64);
        assert_eq!(cfg.trials, 1000);
    }

    #[test]
    fn partial_override_keeps_siblings() {
        let cfg = ExperimentConfig::from_json(r#"{"power": {"p_max_dbm": 30}, "solver": {"gamma_mode": "paper"}}"#, Profile::Desk).unwrap();
        assert_eq!(cfg.power.p_max_dbm, 30.0);
        assert_eq!(cfg.power.xi, 1.2);
        assert_eq!(cfg.solver.gamma_mode, GammaUpdateMode::Paper);
        assert_eq!(cfg.solver.omega, 10.0);
    }

    #[test]
    fn invalid_documents_rejected() {
        for doc in [
            r#"{"schema_version": 2}"#,
            r#"{"trials": 0}"#,
            r#"{"beta": 1.0}"#,
            r#"{"sweep": {"rho": [0.5, 0.25]}}"#,
            r#"{"fairness": {"weight_range": [0, 5]}}"#,
            r#"{"dims": {"l": 3}}"#,
            "not json",
        ] {
            assert!(ExperimentConfig::from_json(doc, Profile::Desk).is_err(), "{doc}");
        }
    }

    #[test]
    fn reference_power_values() {
        let pm = PowerConfig::default().build(4);
        assert!((pm.p_bs - 7.943282347242815).abs() < 1e-12);
        assert!((pm.p_max - 10.0).abs() < 1e-12);
        assert!((pm.sigma2 - 1.9952623149688786e-7).abs() < 1e-20);
    }
}
