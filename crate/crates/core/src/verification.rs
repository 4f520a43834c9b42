//! Independent oracles: central finite differences for the analytic
//! gradients, sampled adversaries for the robust bound, and brute-force
//! identity checks on tiny instances.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::channel::{apply_cascade, gaussian_matrix, ChannelRealization, SystemDims};
use crate::error::Result;
use crate::gradients::{grad_ee, grad_lagrangian_blocks, grad_penalty, grad_rate, Block, BlockValue};
use crate::linalg::{devec, fro_norm, herm, inner, kron, scale_columns, vec};
use crate::objectives::{
    augmented_lagrangian, ee_lb, penalty_g, robust_rates, true_rates, DesignVariables, FairnessSpec, PowerModel,
};
use crate::C64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub name: String,
    pub instance: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub pass: bool,
    /// Description of the worst sample.
    pub witness: Option<String>,
    /// Samples beyond tolerance (bound checks only).
    pub violations: usize,
}

impl OracleReport {
    fn new(name: &str, instance: String, max_rel_error: f64, tolerance: f64, samples: usize, witness: Option<String>) -> Self {
        Self {
            name: name.to_string(),
            instance,
            pass: max_rel_error <= tolerance,
            max_rel_error,
            tolerance,
            samples,
            witness,
            violations: 0,
        }
    }
}

fn describe(dims: &SystemDims) -> String {
    format!(
        "M={} N_T={} N_RIS={} K={} L={} N_R={}",
        dims.m,
        dims.n_t,
        dims.n_ris(),
        dims.k,
        dims.l,
        dims.n_r
    )
}

/// Scalar whose gradient is checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FdTarget {
    Rate { k: usize, ell: usize },
    Penalty,
    Ee,
    Lagrangian { gamma: f64, omega: f64 },
}

impl FdTarget {
    fn value(&self, v: &DesignVariables, ch: &ChannelRealization, pm: &PowerModel, spec: &FairnessSpec) -> Result<f64> {
        match *self {
            FdTarget::Rate { k, ell } => Ok(robust_rates(v, ch, pm)?[[k, ell]]),
            FdTarget::Penalty => penalty_g(v, ch, pm, spec),
            FdTarget::Ee => ee_lb(v, ch, pm),
            FdTarget::Lagrangian { gamma, omega } => augmented_lagrangian(v, ch, pm, spec, gamma, omega),
        }
    }

    fn gradient(
        &self,
        v: &DesignVariables,
        ch: &ChannelRealization,
        pm: &PowerModel,
        spec: &FairnessSpec,
        block: Block,
    ) -> Result<(BlockValue, usize)> {
        match *self {
            FdTarget::Rate { k, ell } => {
                let g = grad_rate(v, ch, pm, k, ell)?;
                Ok((g.block(block), g.guard_hits))
            }
            FdTarget::Penalty => Ok((grad_penalty(v, ch, pm, spec, block)?, 0)),
            FdTarget::Ee => Ok((grad_ee(v, ch, pm, block)?, 0)),
            FdTarget::Lagrangian { gamma, omega } => {
                let g = grad_lagrangian_blocks(v, ch, pm, spec, gamma, omega, &[block])?;
                Ok((g.block(block), g.guard_hits))
            }
        }
    }

    fn name(&self) -> String {
        match self {
            FdTarget::Rate { k, ell } => format!("rate({k},{ell})"),
            FdTarget::Penalty => "penalty".into(),
            FdTarget::Ee => "ee".into(),
            FdTarget::Lagrangian { .. } => "lagrangian".into(),
        }
    }
}

fn random_like(like: &BlockValue, rng: &mut ChaCha8Rng) -> BlockValue {
    like.map(|_| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    })
}

/// Compares `Re(g^H v)` with the central difference of `f` along `n_directions`
/// random complex directions `v`.
///
/// The relative error uses `max(|analytic|, |fd|, 1e-6 ‖g‖ ‖v‖)` as the
/// denominator so that directions nearly orthogonal to `g` are judged on
/// the gradient's scale.
#[allow(clippy::too_many_arguments)]
pub fn fd_directional_check<F>(
    name: &str,
    instance: String,
    vars: &DesignVariables,
    block: Block,
    grad: &BlockValue,
    f: F,
    n_directions: usize,
    h: f64,
    tolerance: f64,
    seed: u64,
) -> Result<OracleReport>
where
    F: Fn(&DesignVariables) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = vars.block(block);
    let g_norm = grad.norm_sqr().sqrt();
    let mut worst = 0.0;
    let mut witness = None;
    for i in 0..n_directions {
        let v = random_like(grad, &mut rng);
        let plus = f(&vars.with_block(block, x.axpy(h, &v)))?;
        let minus = f(&vars.with_block(block, x.axpy(-h, &v)))?;
        let fd = (plus - minus) / (2.0 * h);
        let an = grad.real_inner(&v);
        let scale = an.abs().max(fd.abs()).max(1e-6 * g_norm * v.norm_sqr().sqrt());
        let err = if scale == 0.0 { 0.0 } else { (an - fd).abs() / scale };
        if err > worst || err.is_nan() {
            worst = if err.is_nan() { f64::INFINITY } else { err };
            witness = Some(format!("direction {i}: analytic {an:.6e}, finite difference {fd:.6e}"));
        }
    }
    Ok(OracleReport::new(name, instance, worst, tolerance, n_directions, witness))
}

/// Finite-difference check of the analytic gradient of `target` over `block`.
///
/// Points where the singularity guard is active are reported as failures
/// with a witness instead of being compared.
#[allow(clippy::too_many_arguments)]
pub fn fd_gradient_check(
    target: FdTarget,
    block: Block,
    vars: &DesignVariables,
    ch: &ChannelRealization,
    pm: &PowerModel,
    spec: &FairnessSpec,
    n_directions: usize,
    h: f64,
    seed: u64,
) -> Result<OracleReport> {
    let (grad, hits) = target.gradient(vars, ch, pm, spec, block)?;
    let name = format!("fd:{}:{}", target.name(), block.name());
    if hits > 0 {
        return Ok(OracleReport {
            name,
            instance: describe(&ch.dims),
            max_rel_error: f64::INFINITY,
            tolerance: 1e-4,
            samples: 0,
            pass: false,
            witness: Some(format!("singularity guard active {hits} times")),
            violations: 0,
        });
    }
    fd_directional_check(
        &name,
        describe(&ch.dims),
        vars,
        block,
        &grad,
        |v| target.value(v, ch, pm, spec),
        n_directions,
        h,
        1e-4,
        seed,
    )
}

/// How a sampled error sits in the ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Adversary {
    Uniform,
    Boundary,
    Aligned,
}

fn sample_error(est: &Array2<C64>, radius: f64, kind: Adversary, rng: &mut ChaCha8Rng) -> Array2<C64> {
    match kind {
        Adversary::Aligned => est.mapv(|z| -z * (radius / fro_norm(&est.view()))),
        _ => {
            let g = gaussian_matrix(est.nrows(), est.ncols(), rng);
            let u = if kind == Adversary::Uniform {
                let r: f64 = rng.random();
                r.powf(1.0 / (2.0 * est.len() as f64))
            } else {
                1.0
            };
            g.mapv(|z| z * (u * radius / fro_norm(&g.view())))
        }
    }
}

/// Absolute slack, in bit/s/Hz, allowed before a true rate counts as below
/// the bound.
pub const BOUND_SLACK: f64 = 1e-9;

/// Checks `true_rate ≥ robust_rate_lb` for channels `Ĥ_k + Δ_k` with `Δ_k`
/// drawn alternately uniformly in and on the boundary of the error ball,
/// followed by the aligned error `−δ_k Ĥ_k / ‖Ĥ_k‖_F`.
///
/// `max_rel_error` holds the largest shortfall of a true rate below its
/// bound in bit/s/Hz; the check passes when it is within [`BOUND_SLACK`].
pub fn bound_dominance_check(
    ch: &ChannelRealization,
    vars: &DesignVariables,
    pm: &PowerModel,
    n_error_samples: usize,
    seed: u64,
) -> Result<OracleReport> {
    let lb = robust_rates(vars, ch, pm)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Shortfall::default();
    let mut trial = ch.clone();
    for i in 0..n_error_samples + 1 {
        let kind = if i == n_error_samples {
            Adversary::Aligned
        } else if i % 2 == 0 {
            Adversary::Uniform
        } else {
            Adversary::Boundary
        };
        for k in 0..ch.dims.k {
            let delta = sample_error(&ch.estimate[k], ch.radius[k], kind, &mut rng);
            trial.cascaded[k] = &ch.estimate[k] + &delta;
        }
        let tr = true_rates(vars, &trial, pm)?;
        for ((k, ell), &b) in lb.indexed_iter() {
            tally.record(b, tr[[k, ell]], || format!("sample {i} ({kind:?}), stream ({k},{ell})"));
        }
    }
    Ok(tally.report("bound-dominance", describe(&ch.dims), n_error_samples + 1))
}

/// Error of norm at most `δ_k` that minimizes the desired-signal magnitude
/// of stream `(k, ell)`: it cancels `s = x^H Ĥ_k θ` along the rank-one
/// direction `x θ^H`, where `x = conj(A d_{k,ℓ}) ⊗ c̃_{k,ℓ}`. The resulting
/// signal magnitude is `max(0, |s| − δ_k √N ‖d_{k,ℓ}‖)`.
pub fn signal_minimizing_error(ch: &ChannelRealization, vars: &DesignVariables, k: usize, ell: usize) -> Array2<C64> {
    let dims = &ch.dims;
    let own = dims.stream(k, ell);
    let f = vars.hybrid(dims).column(own).to_owned();
    let c = vars.c.column(own);
    let x = ndarray::Array1::from_shape_fn(dims.n_ant() * dims.n_r, |idx| f[idx / dims.n_r].conj() * c[idx % dims.n_r]);
    let s = inner(&x.view(), &ch.estimate[k].dot(&vars.theta).view());
    let scale = fro_vec(&x) * fro_vec(&vars.theta);
    if scale == 0.0 {
        return Array2::zeros(ch.estimate[k].raw_dim());
    }
    let phase = if s.norm() == 0.0 { C64::new(1.0, 0.0) } else { s / s.norm() };
    let t = ch.radius[k].min(s.norm() / scale);
    let coef = -phase * (t / scale);
    Array2::from_shape_fn(ch.estimate[k].raw_dim(), |(i, j)| coef * x[i] * vars.theta[j].conj())
}

/// Bound check against [`signal_minimizing_error`] for every stream.
pub fn signal_adversary_check(ch: &ChannelRealization, vars: &DesignVariables, pm: &PowerModel) -> Result<OracleReport> {
    let lb = robust_rates(vars, ch, pm)?;
    let mut tally = Shortfall::default();
    for ((k, ell), &b) in lb.indexed_iter() {
        let mut trial = ch.clone();
        trial.cascaded[k] = &ch.estimate[k] + &signal_minimizing_error(ch, vars, k, ell);
        let tr = true_rates(vars, &trial, pm)?;
        tally.record(b, tr[[k, ell]], || format!("stream ({k},{ell})"));
    }
    Ok(tally.report("signal-adversary", describe(&ch.dims), lb.len()))
}

#[derive(Default)]
struct Shortfall {
    worst: f64,
    violations: usize,
    witness: Option<String>,
}

impl Shortfall {
    fn record(&mut self, bound: f64, truth: f64, label: impl FnOnce() -> String) {
        let gap = bound - truth;
        if gap > BOUND_SLACK {
            self.violations += 1;
        }
        if gap > self.worst {
            self.worst = gap;
            self.witness = Some(format!("{}: true {truth:.6e} < bound {bound:.6e}", label()));
        }
    }

    fn report(self, name: &str, instance: String, samples: usize) -> OracleReport {
        let mut r = OracleReport::new(name, instance, self.worst, BOUND_SLACK, samples, self.witness);
        r.violations = self.violations;
        r
    }
}

/// Brute-force checks of the algebraic identities the gradients rely on, on
/// a random instance of `ch`'s size.
pub fn identity_checks(ch: &ChannelRealization, vars: &DesignVariables, seed: u64) -> Vec<OracleReport> {
    let dims = ch.dims;
    let inst = describe(&dims);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    // vec(A X B) = (B^T ⊗ A) vec(X)
    let a = gaussian_matrix(3, 2, &mut rng);
    let x = gaussian_matrix(2, 4, &mut rng);
    let b = gaussian_matrix(4, 2, &mut rng);
    let lhs = vec(&a.dot(&x).dot(&b).view());
    let rhs = kron(&b.t(), &a.view()).dot(&vec(&x.view()));
    reports.push(rel_report("vec-kron", "3x2 * 2x4 * 4x2".into(), &(lhs - &rhs), fro_vec(&rhs)));

    // Cascaded effective channel equals H_R diag(θ) H_T.
    let mut worst = 0.0f64;
    for k in 0..dims.k {
        let direct = scale_columns(&ch.h_r[k].view(), &vars.theta.view()).dot(&ch.h_t);
        let cascade = apply_cascade(&dims, &ch.cascaded[k].view(), &vars.theta.view());
        worst = worst.max(fro_norm(&(&direct - &cascade).view()) / fro_norm(&direct.view()).max(1e-300));
    }
    reports.push(OracleReport::new("cascade", inst.clone(), worst, 1e-12, dims.k, None));

    // One coupling written as a linear form of each block.
    let hybrid = vars.hybrid(&dims);
    let mut worst = 0.0f64;
    let mut count = 0;
    for k in 0..dims.k {
        let g = apply_cascade(&dims, &ch.estimate[k].view(), &vars.theta.view());
        for ell in 0..dims.l {
            let c = vars.c.column(dims.stream(k, ell));
            let h = herm(&g.view()).dot(&c);
            for iv in 0..dims.n_streams() {
                let f = hybrid.column(iv);
                let s = inner(&c, &g.dot(&f).view());
                let d = vars.d.column(iv);
                let b = ndarray::Array1::from_shape_fn(dims.m, |m| {
                    (0..dims.n_t).map(|n| vars.a[m * dims.n_t + n].conj() * h[m * dims.n_t + n]).sum::<C64>()
                });
                let e = ndarray::Array1::from_shape_fn(dims.n_ant(), |j| d[j / dims.n_t].conj() * h[j]);
                let z = ndarray::Array1::from_shape_fn(dims.n_ant() * dims.n_r, |idx| {
                    f[idx / dims.n_r].conj() * c[idx % dims.n_r]
                });
                let fth = herm(&ch.estimate[k].view()).dot(&z);
                let forms = [inner(&b.view(), &d), inner(&e.view(), &vars.a.view()), inner(&fth.view(), &vars.theta.view())];
                for v in forms {
                    worst = worst.max((v - s).norm() / s.norm().max(1e-300));
                }
                count += 1;
            }
        }
    }
    reports.push(OracleReport::new("linear-forms", inst.clone(), worst, 1e-10, count, None));

    // devec inverts vec.
    let m = gaussian_matrix(dims.n_r, dims.n_ant(), &mut rng);
    let back = devec(&vec(&m.view()).view(), dims.n_r, dims.n_ant());
    reports.push(rel_report("devec-vec", inst, &vec(&(&back - &m).view()), fro_norm(&m.view())));
    reports
}

fn fro_vec(v: &ndarray::Array1<C64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn rel_report(name: &str, instance: String, diff: &ndarray::Array1<C64>, scale: f64) -> OracleReport {
    OracleReport::new(name, instance, fro_vec(diff) / scale.max(1e-300), 1e-12, 1, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{apply_csi_error, synthesize_channels, Geometry, PathStats};

    fn tiny(seed: u64, beta: f64) -> (ChannelRealization, DesignVariables, PowerModel, FairnessSpec) {
        let dims = SystemDims::new(2, 2, 4, 2, 1, 2);
        let geo = Geometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ues = geo.sample_ue_positions(2, &mut rng);
        let ch = synthesize_channels(&dims, &geo, &PathStats::default(), &ues, seed).unwrap();
        let ch = apply_csi_error(&ch, beta, seed + 1).unwrap();
        let pm = PowerModel::reference(2);
        let vars = DesignVariables::random_feasible(&dims, pm.p_max, &mut rng);
        (ch, vars, pm, FairnessSpec::new(0.9, vec![1.0, 3.0]))
    }

    #[test]
    fn digital_block_passes() {
        let (ch, vars, pm, spec) = tiny(1, 0.2);
        let r = fd_gradient_check(FdTarget::Rate { k: 0, ell: 0 }, Block::D, &vars, &ch, &pm, &spec, 100, 1e-6, 3).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn lagrangian_equals_ee_gradient_at_zero_penalty() {
        // One user with ρ = 1 has 𝒢 = (ρ − 1) r² = 0 identically.
        let dims = SystemDims::new(2, 2, 4, 1, 1, 2);
        let geo = Geometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ues = geo.sample_ue_positions(1, &mut rng);
        let ch = synthesize_channels(&dims, &geo, &PathStats::default(), &ues, 4).unwrap();
        let pm = PowerModel::reference(1);
        let vars = DesignVariables::random_feasible(&dims, pm.p_max, &mut rng);
        let spec = FairnessSpec::new(1.0, vec![1.0]);
        for b in Block::ALL {
            let gl = grad_lagrangian_blocks(&vars, &ch, &pm, &spec, 0.0, 10.0, &[b]).unwrap().block(b);
            let ge = grad_ee(&vars, &ch, &pm, b).unwrap();
            assert!(gl.axpy(-1.0, &ge).norm_sqr().sqrt() <= 1e-10 * ge.norm_sqr().sqrt());
        }
    }

    #[test]
    fn corrupted_gradient_fails_with_witness() {
        let (ch, vars, pm, _) = tiny(5, 0.2);
        let g = grad_rate(&vars, &ch, &pm, 1, 0).unwrap().block(Block::Theta).map(|z| -z);
        let r = fd_directional_check(
            "flipped",
            String::new(),
            &vars,
            Block::Theta,
            &g,
            |v| Ok(robust_rates(v, &ch, &pm)?[[1, 0]]),
            20,
            1e-6,
            1e-4,
            6,
        )
        .unwrap();
        assert!(!r.pass);
        assert!(r.witness.is_some());
    }

    #[test]
    fn aligned_error_never_breaks_the_bound() {
        for seed in 0..5 {
            let (ch, vars, pm, _) = tiny(20 + seed, 0.2);
            let r = bound_dominance_check(&ch, &vars, &pm, 0, seed).unwrap();
            assert_eq!(r.samples, 1);
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn sampled_errors_can_break_the_bound_at_weak_designs() {
        // The bound's signal term is not a worst case; random designs with a
        // weak desired signal expose this.
        let (ch, vars, pm, _) = tiny(7, 0.2);
        let r = bound_dominance_check(&ch, &vars, &pm, 400, 8).unwrap();
        assert_eq!(r.samples, 401);
        assert!(!r.pass && r.violations > 0 && r.witness.is_some());
    }

    #[test]
    fn signal_adversary_reaches_the_exact_minimum() {
        let (ch, vars, _, _) = tiny(30, 0.2);
        let dims = ch.dims;
        for k in 0..dims.k {
            let delta = signal_minimizing_error(&ch, &vars, k, 0);
            assert!(fro_norm(&delta.view()) <= ch.radius[k] * (1.0 + 1e-12));
            let own = dims.stream(k, 0);
            let f = vars.hybrid(&dims).column(own).to_owned();
            let c = vars.c.column(own);
            let signal = |h: &Array2<C64>| inner(&c, &apply_cascade(&dims, &h.view(), &vars.theta.view()).dot(&f).view()).norm();
            let s = signal(&ch.estimate[k]);
            let expected = (s - ch.radius[k] * (dims.n_ris() as f64).sqrt() * vars.d.column(own).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()).max(0.0);
            let got = signal(&(&ch.estimate[k] + &delta));
            assert!((got - expected).abs() <= 1e-9 * s.max(1e-300), "{got} vs {expected}");
        }
    }

    #[test]
    fn aligned_error_reproduces_bound_signal() {
        // With Δ = −δĤ/‖Ĥ‖ the true signal power equals ϱ|s|².
        let (ch, vars, pm, _) = tiny(9, 0.3);
        let mut trial = ch.clone();
        for k in 0..2 {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            trial.cascaded[k] = &ch.estimate[k] + &sample_error(&ch.estimate[k], ch.radius[k], Adversary::Aligned, &mut rng);
        }
        let g_true = apply_cascade(&ch.dims, &trial.cascaded[0].view(), &vars.theta.view());
        let g_est = apply_cascade(&ch.dims, &ch.estimate[0].view(), &vars.theta.view());
        let f = vars.hybrid(&ch.dims);
        let c = vars.c.column(0);
        let s_true = inner(&c, &g_true.dot(&f.column(0)).view()).norm_sqr();
        let s_est = inner(&c, &g_est.dot(&f.column(0)).view()).norm_sqr();
        let rho = crate::objectives::signal_factor(&ch, 0).unwrap();
        assert!((s_true - rho * s_est).abs() <= 1e-12 * s_est);
        let _ = pm;
    }

    #[test]
    fn identities_hold() {
        let (ch, vars, _, _) = tiny(10, 0.1);
        for r in identity_checks(&ch, &vars, 11) {
            assert!(r.pass, "{r:?}");
        }
    }
}
