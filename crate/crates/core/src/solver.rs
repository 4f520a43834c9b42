//! Penalty dual decomposition around a projected-gradient-ascent
//! alternating sweep.
//!
//! Each inner iteration updates `D`, `a`, `θ` and `C` in turn. A block takes
//! one ascent step along the gradient of the augmented Lagrangian, is
//! projected back onto its feasible set, and the step is halved until the
//! Lagrangian does not decrease. The slack `μ` is then set to its closed-form
//! maximizer. Outer rounds update the multiplier and shrink `ω`.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::gradients::{grad_lagrangian, Block, BlockValue};
use crate::linalg::{fro_norm, norm};
use crate::objectives::{evaluate, DesignVariables, Evaluation, FairnessSpec, PowerModel};
use crate::C64;

/// How the multiplier moves between outer rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaUpdateMode {
    /// `γ ← γ + 𝒢/ω`, the usual augmented-Lagrangian multiplier step.
    #[default]
    Standard,
    /// `γ ← γ + ℋ/ω`, literal reading of the published algorithm.
    Paper,
}

/// Jain's index may fall short of `rho` by this much at success.
pub const FAIRNESS_TOLERANCE: f64 = 1e-3;

/// A run that meets the fairness target keeps going until the Lagrangian
/// agrees with the objective to this relative accuracy, or rounds run out.
pub const AGREEMENT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PddState {
    pub gamma: f64,
    pub omega: f64,
    pub psi: f64,
    /// Inner loop stops once `|Δℋ|` falls to this value.
    pub epsilon: f64,
    /// Current step size per block, in sweep order.
    pub alpha: [f64; 4],
    /// Backtracking gives up on a block below this step.
    pub alpha_min: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub gamma_mode: GammaUpdateMode,
}

impl Default for PddState {
    fn default() -> Self {
        Self {
            gamma: 0.0,
            omega: 10.0,
            psi: 0.1,
            epsilon: 1e-3,
            alpha: [1.0; 4],
            alpha_min: 1e-9,
            max_inner: 2000,
            max_outer: 12,
            gamma_mode: GammaUpdateMode::Standard,
        }
    }
}

impl PddState {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) {
            return Err(Error::NonPositiveOmega(self.omega));
        }
        if !(self.psi > 0.0 && self.psi <= 1.0) {
            return Err(Error::InvalidParameter(format!("psi = {} outside (0, 1]", self.psi)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon = {} must be positive", self.epsilon)));
        }
        if self.alpha.iter().any(|&a| !(a > 0.0)) || !(self.alpha_min > 0.0) {
            return Err(Error::InvalidParameter("step sizes must be positive".into()));
        }
        if !self.gamma.is_finite() {
            return Err(Error::InvalidParameter("gamma must be finite".into()));
        }
        if self.max_inner == 0 || self.max_outer == 0 {
            return Err(Error::InvalidParameter("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

/// One record per inner sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub outer: usize,
    pub inner: usize,
    pub lagrangian: f64,
    pub ee_lb: f64,
    pub jain: f64,
    pub penalty: f64,
    pub mu: f64,
    pub gamma: f64,
    pub omega: f64,
    /// Step accepted per block; zero when backtracking gave up.
    pub steps: [f64; 4],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
    /// Index of the first record of each outer round.
    pub outer_starts: Vec<usize>,
}

impl SolveTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Records of outer round `r`.
    pub fn round(&self, r: usize) -> &[TraceRecord] {
        let start = self.outer_starts.get(r).copied().unwrap_or(self.records.len());
        let end = self.outer_starts.get(r + 1).copied().unwrap_or(self.records.len());
        &self.records[start..end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    ConstraintSatisfied,
    ConstraintUnmet,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub vars: DesignVariables,
    pub trace: SolveTrace,
    pub status: SolveStatus,
    /// Evaluation at `vars` with the final multiplier and penalty weight.
    pub evaluation: Evaluation,
    pub state: PddState,
}

/// Starting point of a run.
#[derive(Debug, Clone)]
pub enum Init {
    Vars(DesignVariables),
    Seed(u64),
}

pub fn project_d(d: &Array2<C64>, p_max: f64) -> Array2<C64> {
    let n = fro_norm(&d.view());
    if n * n <= p_max {
        d.clone()
    } else {
        d.mapv(|z| z * (p_max.sqrt() / n))
    }
}

/// Each entry to modulus `1/√n_t`, phase kept; zero maps to phase zero.
pub fn project_a(a: &Array1<C64>, n_t: usize) -> Array1<C64> {
    let amp = 1.0 / (n_t as f64).sqrt();
    a.mapv(|z| unit_phase(z) * amp)
}

pub fn project_theta(theta: &Array1<C64>) -> Array1<C64> {
    theta.mapv(unit_phase)
}

/// Each column to unit norm; a zero column maps to `e_1`.
pub fn project_c(c: &Array2<C64>) -> Array2<C64> {
    let mut out = c.clone();
    for mut col in out.columns_mut() {
        let n = norm(&col.view());
        if n == 0.0 {
            col.fill(C64::new(0.0, 0.0));
            col[0] = C64::new(1.0, 0.0);
        } else {
            col.mapv_inplace(|z| z / n);
        }
    }
    out
}

fn unit_phase(z: C64) -> C64 {
    let m = z.norm();
    if m == 0.0 {
        C64::new(1.0, 0.0)
    } else {
        z / m
    }
}

fn project_block(b: Block, value: BlockValue, n_t: usize, p_max: f64) -> BlockValue {
    match (b, value) {
        (Block::D, BlockValue::Matrix(m)) => BlockValue::Matrix(project_d(&m, p_max)),
        (Block::A, BlockValue::Vector(v)) => BlockValue::Vector(project_a(&v, n_t)),
        (Block::Theta, BlockValue::Vector(v)) => BlockValue::Vector(project_theta(&v)),
        (Block::C, BlockValue::Matrix(m)) => BlockValue::Matrix(project_c(&m)),
        _ => unreachable!("block kinds are fixed"),
    }
}

/// Projects every block onto its feasible set.
pub fn project_all(vars: &DesignVariables, n_t: usize, p_max: f64) -> DesignVariables {
    DesignVariables {
        d: project_d(&vars.d, p_max),
        a: project_a(&vars.a, n_t),
        theta: project_theta(&vars.theta),
        c: project_c(&vars.c),
        mu: vars.mu.max(0.0),
    }
}

/// Closed-form slack maximizing the Lagrangian: `max(0, −violation − γω)`.
pub fn mu_from_violation(violation: f64, gamma: f64, omega: f64) -> f64 {
    (-violation - gamma * omega).max(0.0)
}

/// `μ = max(0, (Σ r_k)² − ρK Σ r_k² − γω)` at the current rates.
pub fn update_mu(
    vars: &DesignVariables,
    ch: &ChannelRealization,
    pm: &PowerModel,
    spec: &FairnessSpec,
    gamma: f64,
    omega: f64,
) -> Result<f64> {
    let ev = evaluate(vars, ch, pm, spec, gamma, omega)?;
    Ok(mu_from_violation(ev.violation, gamma, omega))
}

fn non_finite(iteration: usize) -> Error {
    Error::NonFinite { iteration, trace: Box::default() }
}

/// One Gauss-Seidel sweep over the four blocks followed by the slack update.
///
/// Step sizes in `state.alpha` are doubled (capped at 1) before each block
/// and halved on every rejected trial.
pub fn inner_sweep(
    vars: &DesignVariables,
    ch: &ChannelRealization,
    pm: &PowerModel,
    spec: &FairnessSpec,
    state: &mut PddState,
) -> Result<(DesignVariables, TraceRecord)> {
    let (gamma, omega) = (state.gamma, state.omega);
    let mut cur = vars.clone();
    let mut h_cur = evaluate(&cur, ch, pm, spec, gamma, omega)?.lagrangian;
    if !h_cur.is_finite() {
        return Err(non_finite(0));
    }
    let mut steps = [0.0; 4];
    for (i, b) in Block::ALL.into_iter().enumerate() {
        let g = grad_lagrangian(&cur, ch, pm, spec, gamma, omega, b)?;
        if !g.is_finite() {
            return Err(non_finite(0));
        }
        if g.norm_sqr() == 0.0 {
            continue;
        }
        let x = cur.block(b);
        let mut alpha = (2.0 * state.alpha[i]).min(1.0);
        while alpha >= state.alpha_min {
            let trial = cur.with_block(b, project_block(b, x.axpy(alpha, &g), ch.dims.n_t, pm.p_max));
            let h = evaluate(&trial, ch, pm, spec, gamma, omega)?.lagrangian;
            if !h.is_finite() {
                return Err(non_finite(0));
            }
            if h >= h_cur {
                cur = trial;
                h_cur = h;
                steps[i] = alpha;
                break;
            }
            alpha *= 0.5;
        }
        state.alpha[i] = alpha.max(state.alpha_min);
    }
    let ev = evaluate(&cur, ch, pm, spec, gamma, omega)?;
    cur.mu = mu_from_violation(ev.violation, gamma, omega);
    let ev = evaluate(&cur, ch, pm, spec, gamma, omega)?;
    if !ev.lagrangian.is_finite() {
        return Err(non_finite(0));
    }
    let record = TraceRecord {
        outer: 0,
        inner: 0,
        lagrangian: ev.lagrangian,
        ee_lb: ev.ee,
        jain: ev.jain,
        penalty: ev.penalty,
        mu: cur.mu,
        gamma,
        omega,
        steps,
    };
    Ok((cur, record))
}

fn fairness_met(ev: &Evaluation, rho: f64) -> bool {
    ev.jain >= rho - FAIRNESS_TOLERANCE
}

/// Runs the full algorithm from `init`.
///
/// Outer rounds continue while the fairness target is missed or the
/// Lagrangian still differs from the objective by more than
/// [`AGREEMENT_TOLERANCE`]. The status reflects the fairness test on the
/// last iterate. When `max_outer` rounds run out with the target missed, that
/// iterate comes back as [`SolveStatus::ConstraintUnmet`]; it is still
/// feasible for every block constraint.
pub fn solve(
    ch: &ChannelRealization,
    pm: &PowerModel,
    spec: &FairnessSpec,
    state: &PddState,
    init: Init,
) -> Result<SolveOutcome> {
    ch.dims.validate()?;
    pm.validate(&ch.dims)?;
    spec.validate(ch.dims.k)?;
    state.validate()?;
    let mut st = state.clone();
    let mut vars = match init {
        Init::Vars(v) => {
            v.check_shapes(&ch.dims)?;
            project_all(&v, ch.dims.n_t, pm.p_max)
        }
        Init::Seed(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            DesignVariables::random_feasible(&ch.dims, pm.p_max, &mut rng)
        }
    };
    vars.mu = update_mu(&vars, ch, pm, spec, st.gamma, st.omega)?;

    let mut trace = SolveTrace::default();
    let mut status = SolveStatus::ConstraintUnmet;
    for outer in 0..st.max_outer {
        trace.outer_starts.push(trace.records.len());
        st.alpha = [1.0; 4];
        vars.mu = mu_from_violation(evaluate(&vars, ch, pm, spec, st.gamma, st.omega)?.violation, st.gamma, st.omega);
        let mut h_prev = evaluate(&vars, ch, pm, spec, st.gamma, st.omega)?.lagrangian;
        for inner in 0..st.max_inner {
            let (next, mut rec) = match inner_sweep(&vars, ch, pm, spec, &mut st) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::NonFinite { iteration: trace.records.len(), trace: Box::new(trace) })
                }
                Err(e) => return Err(e),
            };
            rec.outer = outer;
            rec.inner = inner;
            let h = rec.lagrangian;
            trace.records.push(rec);
            vars = next;
            let done = (h - h_prev).abs() <= st.epsilon;
            h_prev = h;
            if done {
                break;
            }
        }
        let ev = evaluate(&vars, ch, pm, spec, st.gamma, st.omega)?;
        if fairness_met(&ev, spec.rho) {
            status = SolveStatus::ConstraintSatisfied;
            if terminal_gap(&ev) <= AGREEMENT_TOLERANCE {
                break;
            }
        } else {
            status = SolveStatus::ConstraintUnmet;
        }
        if outer + 1 < st.max_outer {
            st.gamma += match st.gamma_mode {
                GammaUpdateMode::Standard => ev.penalty / st.omega,
                GammaUpdateMode::Paper => ev.lagrangian / st.omega,
            };
            st.omega *= st.psi;
        }
    }
    let evaluation = evaluate(&vars, ch, pm, spec, st.gamma, st.omega)?;
    Ok(SolveOutcome { vars, trace, status, evaluation, state: st })
}

/// Relative gap `|ℋ − η| / |η|`; zero once the multiplier and penalty
/// terms have vanished.
pub fn terminal_gap(ev: &Evaluation) -> f64 {
    (ev.lagrangian - ev.ee).abs() / ev.ee.abs().max(f64::MIN_POSITIVE)
}

/// Seed of start `i`; start 0 reuses `seed` so one start equals [`solve`].
pub fn start_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Debug, Clone)]
pub struct MultistartOutcome {
    pub best: SolveOutcome,
    pub best_start: usize,
    /// `(status, ee_lb, lagrangian)` of every start, by start index.
    pub finals: Vec<(SolveStatus, f64, f64)>,
}

/// Runs `n_starts` independent solves in parallel and keeps the highest
/// `ee_lb` among runs that met the fairness target, or the highest
/// Lagrangian if none did. Ties go to the lowest start index.
pub fn multistart(
    ch: &ChannelRealization,
    pm: &PowerModel,
    spec: &FairnessSpec,
    state: &PddState,
    n_starts: usize,
    seed: u64,
) -> Result<MultistartOutcome> {
    if n_starts == 0 {
        return Err(Error::InvalidParameter("at least one start is required".into()));
    }
    let runs: Vec<SolveOutcome> = (0..n_starts)
        .into_par_iter()
        .map(|i| solve(ch, pm, spec, state, Init::Seed(start_seed(seed, i))))
        .collect::<Result<_>>()?;
    let finals: Vec<_> = runs.iter().map(|r| (r.status, r.evaluation.ee, r.evaluation.lagrangian)).collect();
    let any_ok = finals.iter().any(|f| f.0 == SolveStatus::ConstraintSatisfied);
    let score = |f: &(SolveStatus, f64, f64)| if any_ok { f.1 } else { f.2 };
    let mut best_start = None;
    for (i, f) in finals.iter().enumerate() {
        if any_ok && f.0 != SolveStatus::ConstraintSatisfied {
            continue;
        }
        if best_start.is_none_or(|b: usize| score(f) > score(&finals[b])) {
            best_start = Some(i);
        }
    }
    let best_start = best_start.expect("at least one start");
    let best = runs.into_iter().nth(best_start).expect("index in range");
    Ok(MultistartOutcome { best, best_start, finals })
}
