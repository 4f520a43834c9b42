//! Closed-form complex gradients of the robust rates, the fairness penalty
//! and the augmented Lagrangian.
//!
//! Convention: for a real function `f(z)` the gradient is `g = 2 ∂f/∂z̄`, so
//! the first-order change along a direction `v` is `Re(g^H v)` and the
//! ascent step `z + αg` gains `α‖g‖²`.
//!
//! Every scalar in the bound is a linear form `s = u^H x` of the block being
//! differentiated (or `s̄`, for the combiners), so each block gradient is a
//! weighted sum of the `u` vectors. The weights, the partial derivatives of a
//! rate with respect to `s̄` and to the inflated norms `δ√N ‖d‖`, are shared
//! across blocks and computed once per stream.

use ndarray::{Array1, Array2, Zip};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::herm;
use crate::objectives::{evaluation_from_rates, Couplings, DesignVariables, FairnessSpec, PowerModel, INV_LN2};
use crate::C64;

/// Floor applied to `|s|` and `‖d‖` wherever they appear in a denominator.
pub const SINGULARITY_GUARD: f64 = 1e-12;

/// Design blocks in sweep order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    D,
    A,
    Theta,
    C,
}

impl Block {
    pub const ALL: [Block; 4] = [Block::D, Block::A, Block::Theta, Block::C];

    pub fn name(self) -> &'static str {
        match self {
            Block::D => "D",
            Block::A => "a",
            Block::Theta => "theta",
            Block::C => "C",
        }
    }
}

/// A block-shaped complex array: a value of a block or a gradient with
/// respect to it.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockValue {
    Matrix(Array2<C64>),
    Vector(Array1<C64>),
}

impl BlockValue {
    pub fn iter(&self) -> Box<dyn Iterator<Item = &C64> + '_> {
        match self {
            BlockValue::Matrix(m) => Box::new(m.iter()),
            BlockValue::Vector(v) => Box::new(v.iter()),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            BlockValue::Matrix(m) => m.len(),
            BlockValue::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm_sqr(&self) -> f64 {
        self.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `Re(self^H other)`.
    pub fn real_inner(&self, other: &BlockValue) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| (a.conj() * b).re).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn map(&self, f: impl FnMut(C64) -> C64) -> BlockValue {
        match self {
            BlockValue::Matrix(m) => BlockValue::Matrix(m.mapv(f)),
            BlockValue::Vector(v) => BlockValue::Vector(v.mapv(f)),
        }
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &BlockValue) -> BlockValue {
        match (self, other) {
            (BlockValue::Matrix(x), BlockValue::Matrix(y)) => BlockValue::Matrix(x + &y.mapv(|z| z * alpha)),
            (BlockValue::Vector(x), BlockValue::Vector(y)) => BlockValue::Vector(x + &y.mapv(|z| z * alpha)),
            _ => panic!("axpy: block kinds differ"),
        }
    }
}

impl DesignVariables {
    pub fn block(&self, b: Block) -> BlockValue {
        match b {
            Block::D => BlockValue::Matrix(self.d.clone()),
            Block::A => BlockValue::Vector(self.a.clone()),
            Block::Theta => BlockValue::Vector(self.theta.clone()),
            Block::C => BlockValue::Matrix(self.c.clone()),
        }
    }

    /// Replaces one block. Panics on a kind mismatch.
    pub fn with_block(&self, b: Block, value: BlockValue) -> DesignVariables {
        let mut out = self.clone();
        match (b, value) {
            (Block::D, BlockValue::Matrix(m)) => out.d = m,
            (Block::A, BlockValue::Vector(v)) => out.a = v,
            (Block::Theta, BlockValue::Vector(v)) => out.theta = v,
            (Block::C, BlockValue::Matrix(m)) => out.c = m,
            _ => panic!("with_block: kind mismatch for block {}", b.name()),
        }
        out
    }
}

/// Gradients with respect to all four blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub g_d: Array2<C64>,
    pub g_a: Array1<C64>,
    pub g_theta: Array1<C64>,
    pub g_c: Array2<C64>,
    /// Number of `|s|` or `‖d‖` values that hit [`SINGULARITY_GUARD`].
    pub guard_hits: usize,
}

impl GradientBundle {
    fn zeros(vars: &DesignVariables) -> Self {
        Self {
            g_d: Array2::zeros(vars.d.raw_dim()),
            g_a: Array1::zeros(vars.a.len()),
            g_theta: Array1::zeros(vars.theta.len()),
            g_c: Array2::zeros(vars.c.raw_dim()),
            guard_hits: 0,
        }
    }

    pub fn block(&self, b: Block) -> BlockValue {
        match b {
            Block::D => BlockValue::Matrix(self.g_d.clone()),
            Block::A => BlockValue::Vector(self.g_a.clone()),
            Block::Theta => BlockValue::Vector(self.g_theta.clone()),
            Block::C => BlockValue::Matrix(self.g_c.clone()),
        }
    }

    pub fn is_finite(&self) -> bool {
        Block::ALL.iter().all(|&b| self.block(b).is_finite())
    }
}

/// Gradient of `Σ_{k,ℓ} w[k,ℓ] R_{k,ℓ}` over the requested blocks.
pub(crate) fn weighted_rate_gradient(
    cp: &Couplings,
    vars: &DesignVariables,
    ch: &ChannelRealization,
    weights: &Array2<f64>,
    blocks: &[Block],
) -> GradientBundle {
    let dims = &ch.dims;
    let (l, n_t, n_r) = (dims.l, dims.n_t, dims.n_r);
    let ns = dims.n_streams();
    let mut out = GradientBundle::zeros(vars);
    let want = |b: Block| blocks.contains(&b);

    // Unit directions `d / ‖d‖`, guarded.
    let d_dir: Vec<Array1<C64>> = (0..ns)
        .map(|iv| {
            let n = cp.d_norm[iv].max(SINGULARITY_GUARD);
            vars.d.column(iv).mapv(|z| z / n)
        })
        .collect();
    out.guard_hits += cp.d_norm.iter().filter(|&&n| n < SINGULARITY_GUARD).count();

    for k in 0..dims.k {
        let g_hat_h = herm(&cp.g[k].view());
        let mut theta_acc = Array1::<C64>::zeros(dims.n_ant() * n_r);
        for ell in 0..l {
            let w = weights[[k, ell]];
            if w == 0.0 {
                continue;
            }
            let own = k * l + ell;
            let (x1, x2) = cp.denominators(k, ell, l);
            let row = cp.s[k].row(ell);
            let diff = 1.0 / x1 - 1.0 / x2;

            // ∂R/∂s̄ for every coupling, and ∂R/∂(δ√N‖d‖) for interferers.
            let mut sens = Array1::<C64>::zeros(ns);
            let mut sens_c = vec![0.0; ns];
            for (iv, &z) in row.iter().enumerate() {
                if iv == own {
                    sens[iv] = z * (w * INV_LN2 * cp.signal_factor[k] / x1);
                } else {
                    let mag = z.norm();
                    if mag < SINGULARITY_GUARD {
                        out.guard_hits += 1;
                    }
                    let c = cp.inflation[k] * cp.d_norm[iv];
                    sens[iv] = z * (w * INV_LN2 * diff * (1.0 + c / mag.max(SINGULARITY_GUARD)));
                    sens_c[iv] = w * INV_LN2 * diff * 2.0 * (mag + c);
                }
            }
            let sens_conj = sens.mapv(|z| z.conj());
            let combiner = vars.c.column(own);
            // Ĝ_k^H c̃_{k,ℓ}
            let h = g_hat_h.dot(&combiner);

            if want(Block::D) {
                // b = A^H Ĝ^H c̃
                let b = Array1::from_shape_fn(dims.m, |m| {
                    (0..n_t).map(|n| vars.a[m * n_t + n].conj() * h[m * n_t + n]).sum::<C64>()
                });
                for iv in 0..ns {
                    let mut col = out.g_d.column_mut(iv);
                    let coef = sens[iv] * 2.0;
                    Zip::from(&mut col).and(&b).for_each(|g, &bm| *g += coef * bm);
                    if iv != own && sens_c[iv] != 0.0 {
                        let coef = sens_c[iv] * cp.inflation[k];
                        Zip::from(&mut col).and(&d_dir[iv]).for_each(|g, &dd| *g += dd * coef);
                    }
                }
            }
            if want(Block::A) {
                // Σ_iv s̄ens_iv d_iv, one entry per subarray.
                let mix = vars.d.dot(&sens_conj);
                for j in 0..dims.n_ant() {
                    out.g_a[j] += mix[j / n_t].conj() * h[j] * 2.0;
                }
            }
            if want(Block::Theta) {
                // z[j n_r + r] = conj(w_j) c̃_r with w = F s̄ens.
                let wv = cp.hybrid.dot(&sens_conj);
                for (j, wj) in wv.iter().enumerate() {
                    for r in 0..n_r {
                        theta_acc[j * n_r + r] += wj.conj() * combiner[r];
                    }
                }
            }
            if want(Block::C) {
                let col = cp.gf[k].dot(&sens_conj);
                let mut gc = out.g_c.column_mut(own);
                Zip::from(&mut gc).and(&col).for_each(|g, &v| *g += v * 2.0);
            }
        }
        if want(Block::Theta) {
            let contrib = herm(&ch.estimate[k].view()).dot(&theta_acc);
            out.g_theta.zip_mut_with(&contrib, |g, &v| *g += v * 2.0);
        }
    }
    out
}

fn unit_weights(ch: &ChannelRealization, k: usize, ell: usize) -> Result<Array2<f64>> {
    if k >= ch.dims.k || ell >= ch.dims.l {
        return Err(Error::Shape(format!("stream ({k}, {ell}) out of range")));
    }
    let mut w = Array2::zeros((ch.dims.k, ch.dims.l));
    w[[k, ell]] = 1.0;
    Ok(w)
}

/// Gradient of the lower-bound rate of stream `ell` of user `k` over all blocks.
pub fn grad_rate(vars: &DesignVariables, ch: &ChannelRealization, pm: &PowerModel, k: usize, ell: usize) -> Result<GradientBundle> {
    let w = unit_weights(ch, k, ell)?;
    let cp = Couplings::new(vars, ch, pm.sigma2)?;
    Ok(weighted_rate_gradient(&cp, vars, ch, &w, &Block::ALL))
}

fn grad_rate_block(
    vars: &DesignVariables,
    ch: &ChannelRealization,
    pm: &PowerModel,
    k: usize,
    ell: usize,
    block: Block,
) -> Result<GradientBundle> {
    let w = unit_weights(ch, k, ell)?;
    let cp = Couplings::new(vars, ch, pm.sigma2)?;
    Ok(weighted_rate_gradient(&cp, vars, ch, &w, &[block]))
}

pub fn grad_rate_wrt_d(vars: &DesignVariables, ch: &ChannelRealization, pm: &PowerModel, k: usize, ell: usize) -> Result<Array2<C64>> {
    Ok(grad_rate_block(vars, ch, pm, k, ell, Block::D)?.g_d)
}

pub fn grad_rate_wrt_a(vars: &DesignVariables, ch: &ChannelRealization, pm: &PowerModel, k: usize, ell: usize) -> Result<Array1<C64>> {
    Ok(grad_rate_block(vars, ch, pm, k, ell, Block::A)?.g_a)
}

pub fn grad_rate_wrt_theta(vars: &DesignVariables, ch: &ChannelRealization, pm: &PowerModel, k: usize, ell: usize) -> Result<Array1<C64>> {
    Ok(grad_rate_block(vars, ch, pm, k, ell, Block::Theta)?.g_theta)
}

pub fn grad_rate_wrt_c(vars: &DesignVariables, ch: &ChannelRealization, pm: &PowerModel, k: usize, ell: usize) -> Result<Array2<C64>> {
    Ok(grad_rate_block(vars, ch, pm, k, ell, Block::C)?.g_c)
}

/// `∂𝒢/∂R_{k,ℓ} = 2(ρK r_k − Σ r) / w_k`.
fn penalty_rate_weights(user_rates: &Array1<f64>, spec: &FairnessSpec, l: usize) -> Array2<f64> {
    let k_users = user_rates.len();
    let sum: f64 = user_rates.sum();
    Array2::from_shape_fn((k_users, l), |(k, _)| {
        2.0 * (spec.rho * k_users as f64 * user_rates[k] - sum) / spec.weights[k]
    })
}

/// Gradient of the fairness penalty (independent of `μ`).
pub fn grad_penalty(vars: &DesignVariables, ch: &ChannelRealization, pm: &PowerModel, spec: &FairnessSpec, block: Block) -> Result<BlockValue> {
    spec.validate(ch.dims.k)?;
    let cp = Couplings::new(vars, ch, pm.sigma2)?;
    let rates = cp.rates(&ch.dims);
    let r = crate::objectives::weighted_user_rates(&rates, &spec.weights);
    let w = penalty_rate_weights(&r, spec, ch.dims.l);
    Ok(weighted_rate_gradient(&cp, vars, ch, &w, &[block]).block(block))
}

/// Gradient of `ℋ = η − γ𝒢 − 𝒢²/(2ω)` over the requested blocks.
pub fn grad_lagrangian_blocks(
    vars: &DesignVariables,
    ch: &ChannelRealization,
    pm: &PowerModel,
    spec: &FairnessSpec,
    gamma: f64,
    omega: f64,
    blocks: &[Block],
) -> Result<GradientBundle> {
    if !(omega > 0.0) {
        return Err(Error::NonPositiveOmega(omega));
    }
    spec.validate(ch.dims.k)?;
    let cp = Couplings::new(vars, ch, pm.sigma2)?;
    let ev = evaluation_from_rates(cp.rates(&ch.dims), vars, &ch.dims, pm, spec, gamma, omega);
    let scale = gamma + ev.penalty / omega;
    let eta = pm.ee_scale() / ev.power;
    let mut w = penalty_rate_weights(&ev.user_rates, spec, ch.dims.l);
    w.mapv_inplace(|v| eta - scale * v);
    let mut out = weighted_rate_gradient(&cp, vars, ch, &w, blocks);
    if blocks.contains(&Block::D) {
        // Quotient-rule term from the transmit power in the denominator of η.
        let coef = -pm.ee_scale() * ev.sum_rate * 2.0 * pm.xi / (ev.power * ev.power);
        out.g_d.zip_mut_with(&vars.d, |g, &d| *g += d * coef);
    }
    Ok(out)
}

pub fn grad_lagrangian(
    vars: &DesignVariables,
    ch: &ChannelRealization,
    pm: &PowerModel,
    spec: &FairnessSpec,
    gamma: f64,
    omega: f64,
    block: Block,
) -> Result<BlockValue> {
    Ok(grad_lagrangian_blocks(vars, ch, pm, spec, gamma, omega, &[block])?.block(block))
}

/// Gradient of the lower-bound energy efficiency `η`.
pub fn grad_ee(vars: &DesignVariables, ch: &ChannelRealization, pm: &PowerModel, block: Block) -> Result<BlockValue> {
    let cp = Couplings::new(vars, ch, pm.sigma2)?;
    let rates = cp.rates(&ch.dims);
    let power = crate::objectives::total_power(vars, &ch.dims, pm);
    let w = Array2::from_elem(rates.raw_dim(), pm.ee_scale() / power);
    let mut out = weighted_rate_gradient(&cp, vars, ch, &w, &[block]);
    if block == Block::D {
        let coef = -pm.ee_scale() * rates.sum() * 2.0 * pm.xi / (power * power);
        out.g_d.zip_mut_with(&vars.d, |g, &d| *g += d * coef);
    }
    Ok(out.block(block))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{apply_csi_error, synthesize_channels, Geometry, PathStats, SystemDims};
    use crate::objectives::{augmented_lagrangian, ee_lb, penalty_g, robust_rate_lb};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64, l: usize, beta: f64) -> (ChannelRealization, DesignVariables, PowerModel, FairnessSpec) {
        let dims = SystemDims::new(2 * l, 2, 4, 2, l, 2);
        let geo = Geometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ues = geo.sample_ue_positions(dims.k, &mut rng);
        let ch = synthesize_channels(&dims, &geo, &PathStats::default(), &ues, seed).unwrap();
        let ch = apply_csi_error(&ch, beta, seed ^ 0xABCD).unwrap();
        let pm = PowerModel::reference(dims.k);
        let vars = DesignVariables::random_feasible(&dims, pm.p_max, &mut rng);
        (ch, vars, pm, FairnessSpec::new(0.9, vec![1.0, 2.5]))
    }

    fn random_direction(like: &BlockValue, rng: &mut ChaCha8Rng) -> BlockValue {
        use rand_distr::{Distribution, StandardNormal};
        like.map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re, im)
        })
    }

    fn check_block<F>(vars: &DesignVariables, block: Block, grad: &BlockValue, f: F, seed: u64)
    where
        F: Fn(&DesignVariables) -> f64,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-6;
        for _ in 0..10 {
            let v = random_direction(grad, &mut rng);
            let x = vars.block(block);
            let plus = f(&vars.with_block(block, x.axpy(h, &v)));
            let minus = f(&vars.with_block(block, x.axpy(-h, &v)));
            let fd = (plus - minus) / (2.0 * h);
            let an = grad.real_inner(&v);
            let scale = an.abs().max(fd.abs()).max(1e-6 * grad.norm_sqr().sqrt() * v.norm_sqr().sqrt());
            assert!((an - fd).abs() <= 1e-4 * scale, "{}: analytic {an} vs fd {fd}", block.name());
        }
    }

    #[test]
    fn rate_gradients_match_finite_differences() {
        for (seed, l) in [(1, 1), (2, 2), (3, 1)] {
            let (ch, vars, pm, _) = instance(seed, l, 0.2);
            for k in 0..ch.dims.k {
                let g = grad_rate(&vars, &ch, &pm, k, 0).unwrap();
                for b in Block::ALL {
                    check_block(&vars, b, &g.block(b), |v| robust_rate_lb(v, &ch, &pm, k, 0).unwrap(), seed * 7 + k as u64);
                }
            }
        }
    }

    #[test]
    fn lagrangian_gradients_match_finite_differences() {
        let (ch, mut vars, pm, spec) = instance(11, 1, 0.15);
        vars.mu = 0.3;
        let (gamma, omega) = (0.7, 10.0);
        let g = grad_lagrangian_blocks(&vars, &ch, &pm, &spec, gamma, omega, &Block::ALL).unwrap();
        for b in Block::ALL {
            check_block(&vars, b, &g.block(b), |v| augmented_lagrangian(v, &ch, &pm, &spec, gamma, omega).unwrap(), 5);
            let gp = grad_penalty(&vars, &ch, &pm, &spec, b).unwrap();
            check_block(&vars, b, &gp, |v| penalty_g(v, &ch, &pm, &spec).unwrap(), 6);
            let ge = grad_ee(&vars, &ch, &pm, b).unwrap();
            check_block(&vars, b, &ge, |v| ee_lb(v, &ch, &pm).unwrap(), 7);
        }
    }

    #[test]
    fn combiner_gradient_has_no_cross_columns() {
        let (ch, vars, pm, _) = instance(4, 2, 0.2);
        let g = grad_rate_wrt_c(&vars, &ch, &pm, 1, 1).unwrap();
        let own = ch.dims.stream(1, 1);
        for (j, col) in g.columns().into_iter().enumerate() {
            if j != own {
                assert!(col.iter().all(|z| *z == C64::new(0.0, 0.0)));
            }
        }
        assert!(g.column(own).iter().any(|z| z.norm() > 0.0));
    }

    #[test]
    fn single_user_penalty_gradient_vanishes() {
        let dims = SystemDims::new(2, 2, 4, 1, 1, 2);
        let geo = Geometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ues = geo.sample_ue_positions(1, &mut rng);
        let ch = synthesize_channels(&dims, &geo, &PathStats::default(), &ues, 9).unwrap();
        let pm = PowerModel::reference(1);
        let vars = DesignVariables::random_feasible(&dims, pm.p_max, &mut rng);
        let spec = FairnessSpec::new(1.0, vec![2.0]);
        for b in Block::ALL {
            let g = grad_penalty(&vars, &ch, &pm, &spec, b).unwrap();
            assert!(g.norm_sqr() < 1e-24, "{}", b.name());
        }
    }

    #[test]
    fn zero_amplifier_overhead_drops_quotient_term() {
        let (ch, vars, mut pm, _) = instance(12, 1, 0.0);
        pm.xi = 0.0;
        let ge = grad_ee(&vars, &ch, &pm, Block::D).unwrap();
        let p = crate::objectives::total_power(&vars, &ch.dims, &pm);
        let mut sum = Array2::<C64>::zeros(vars.d.raw_dim());
        for k in 0..ch.dims.k {
            sum = sum + grad_rate_wrt_d(&vars, &ch, &pm, k, 0).unwrap();
        }
        let expected = BlockValue::Matrix(sum.mapv(|z| z * (pm.ee_scale() / p)));
        let diff = ge.axpy(-1.0, &expected);
        assert!(diff.norm_sqr().sqrt() <= 1e-12 * expected.norm_sqr().sqrt());
    }

    #[test]
    fn guard_keeps_gradients_finite_at_zero_columns() {
        let (ch, mut vars, pm, spec) = instance(13, 1, 0.2);
        vars.d.column_mut(1).fill(C64::new(0.0, 0.0));
        let g = grad_lagrangian_blocks(&vars, &ch, &pm, &spec, 0.0, 10.0, &Block::ALL).unwrap();
        assert!(g.is_finite());
        assert!(g.guard_hits > 0);
    }

    #[test]
    fn nonpositive_omega_rejected() {
        let (ch, vars, pm, spec) = instance(14, 1, 0.2);
        assert!(matches!(
            grad_lagrangian(&vars, &ch, &pm, &spec, 0.0, -1.0, Block::A),
            Err(Error::NonPositiveOmega(_))
        ));
    }
}
