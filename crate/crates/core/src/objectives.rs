//! Scalar objectives: per-stream rates, the robust rate lower bound, power,
//! energy efficiency, Jain's index, the fairness penalty and the augmented
//! Lagrangian.
//!
//! Energy efficiency is expressed in Mbit/Joule: `bandwidth * Σ R / P_tot`
//! with the bandwidth in MHz.

use std::f64::consts::LN_2;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{apply_cascade, gaussian_matrix, ChannelRealization, SystemDims};
use crate::error::{Error, Result};
use crate::linalg::{fro_norm, herm, norm};
use crate::units::{dbm_to_watts, dbw_to_watts};
use crate::C64;

/// The four design blocks plus the slack `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignVariables {
    /// Digital precoder, `m x (k l)`; column `k * l + ell` serves stream `ell` of user `k`.
    pub d: Array2<C64>,
    /// Stacked analog precoder, `m * n_t`; block `m` feeds subarray `m`.
    pub a: Array1<C64>,
    /// RIS reflection coefficients.
    pub theta: Array1<C64>,
    /// Unit-norm combiners, `n_r x (k l)`.
    pub c: Array2<C64>,
    /// Fairness slack.
    pub mu: f64,
}

impl DesignVariables {
    /// Random feasible point: Gaussian precoder scaled to `‖D‖_F² = p_max`,
    /// random phases for `a` and `θ`, random unit-norm combiners.
    pub fn random_feasible<R: Rng>(dims: &SystemDims, p_max: f64, rng: &mut R) -> Self {
        let ns = dims.n_streams();
        let g = gaussian_matrix(dims.m, ns, rng);
        let d = &g * C64::from(p_max.sqrt() / fro_norm(&g.view()));
        let amp = 1.0 / (dims.n_t as f64).sqrt();
        let a = Array1::from_shape_simple_fn(dims.n_ant(), || {
            C64::from_polar(amp, rng.random_range(0.0..std::f64::consts::TAU))
        });
        let theta = Array1::from_shape_simple_fn(dims.n_ris(), || {
            C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))
        });
        let mut c = gaussian_matrix(dims.n_r, ns, rng);
        for mut col in c.columns_mut() {
            let n = norm(&col.view());
            col.mapv_inplace(|z| z / n);
        }
        Self { d, a, theta, c, mu: 0.0 }
    }

    pub fn check_shapes(&self, dims: &SystemDims) -> Result<()> {
        let ns = dims.n_streams();
        let ok = self.d.dim() == (dims.m, ns)
            && self.a.len() == dims.n_ant()
            && self.theta.len() == dims.n_ris()
            && self.c.dim() == (dims.n_r, ns);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("design variables do not match the system dimensions".into()))
        }
    }

    /// Block-diagonal analog precoder `A`, `m n_t x m`.
    pub fn analog_matrix(&self, dims: &SystemDims) -> Array2<C64> {
        let mut out = Array2::zeros((dims.n_ant(), dims.m));
        for (j, z) in self.a.iter().enumerate() {
            out[[j, j / dims.n_t]] = *z;
        }
        out
    }

    /// Hybrid precoders `A D`, one column per stream.
    pub fn hybrid(&self, dims: &SystemDims) -> Array2<C64> {
        Array2::from_shape_fn((dims.n_ant(), dims.n_streams()), |(j, s)| {
            self.a[j] * self.d[[j / dims.n_t, s]]
        })
    }

    pub fn transmit_power(&self) -> f64 {
        self.d.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Power consumption constants, in watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    /// Static BS power.
    pub p_bs: f64,
    /// Amplifier inefficiency factor, at least 1.
    pub xi: f64,
    /// Per BS phase shifter.
    pub p_rf_t: f64,
    /// Per RIS element.
    pub p_theta: f64,
    /// Static power per user.
    pub p_ue: Vec<f64>,
    /// Receive budget per user.
    pub p_r: Vec<f64>,
    /// Transmit budget on `‖D‖_F²`.
    pub p_max: f64,
    /// Noise power.
    pub sigma2: f64,
    pub bandwidth_hz: f64,
}

impl PowerModel {
    /// Table-style defaults for `k` users: 9 dBW static BS power,
    /// amplifier factor 1.2, 1 dBm per phase shifter and RIS element,
    /// 5 dBm per user (static and receive), 40 dBm budget, -37 dBm noise,
    /// 200 MHz.
    pub fn reference(k: usize) -> Self {
        Self {
            p_bs: dbw_to_watts(9.0),
            xi: 1.2,
            p_rf_t: dbm_to_watts(1.0),
            p_theta: dbm_to_watts(1.0),
            p_ue: vec![dbm_to_watts(5.0); k],
            p_r: vec![dbm_to_watts(5.0); k],
            p_max: dbm_to_watts(40.0),
            sigma2: dbm_to_watts(-37.0),
            bandwidth_hz: 200e6,
        }
    }

    pub fn validate(&self, dims: &SystemDims) -> Result<()> {
        let scalars = [self.p_bs, self.p_rf_t, self.p_theta, self.p_max, self.sigma2, self.bandwidth_hz];
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !scalars.iter().copied().all(finite_nonneg)
            || !self.p_ue.iter().chain(&self.p_r).copied().all(finite_nonneg)
        {
            return Err(Error::InvalidParameter("power constants must be finite and nonnegative".into()));
        }
        if !(self.xi.is_finite() && self.xi >= 1.0) {
            return Err(Error::InvalidParameter(format!("amplifier factor {} < 1", self.xi)));
        }
        if self.p_ue.len() != dims.k || self.p_r.len() != dims.k {
            return Err(Error::Shape("per-user power vectors must have k entries".into()));
        }
        if self.sigma2 <= 0.0 {
            return Err(Error::InvalidParameter("noise power must be positive".into()));
        }
        Ok(())
    }

    /// Power that does not depend on the precoder.
    pub fn static_power(&self, dims: &SystemDims) -> f64 {
        self.p_bs
            + dims.n_ant() as f64 * self.p_rf_t
            + dims.n_ris() as f64 * self.p_theta
            + self.p_ue.iter().sum::<f64>()
            + self.p_r.iter().sum::<f64>()
    }

    /// Bandwidth in MHz, the factor turning bits/s/Hz per watt into Mbit/J.
    pub fn ee_scale(&self) -> f64 {
        self.bandwidth_hz * 1e-6
    }
}

/// Fairness target `rho` and per-user QoS weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessSpec {
    pub rho: f64,
    pub weights: Vec<f64>,
}

impl FairnessSpec {
    pub fn new(rho: f64, weights: Vec<f64>) -> Self {
        Self { rho, weights }
    }

    /// Checks `w_k > 0` and `rho <= 1`. Values of `rho` below `1/K` are
    /// accepted; they make the constraint vacuous.
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.weights.len() != k {
            return Err(Error::Shape(format!("{} weights for {k} users", self.weights.len())));
        }
        if self.weights.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(Error::InvalidParameter("weights must be positive".into()));
        }
        if !(self.rho.is_finite() && (0.0..=1.0).contains(&self.rho)) {
            return Err(Error::InvalidParameter(format!("rho = {} outside [0, 1]", self.rho)));
        }
        Ok(())
    }
}

/// Inflation `δ_k √N_RIS` of the interference magnitudes.
pub(crate) fn inflation(ch: &ChannelRealization, k: usize) -> f64 {
    ch.radius[k] * (ch.dims.n_ris() as f64).sqrt()
}

/// Desired-signal attenuation `(1 − δ_k / ‖Ĥ_k‖_F)²`.
pub(crate) fn signal_factor(ch: &ChannelRealization, k: usize) -> Result<f64> {
    let r = ch.radius[k];
    if r == 0.0 {
        return Ok(1.0);
    }
    let n = ch.estimate_norm(k);
    if n < r {
        return Err(Error::UnreliableEstimate { user: k, estimate_norm: n, radius: r });
    }
    Ok((1.0 - r / n).powi(2))
}

/// Per-user couplings `s[ℓ, (i,v)] = c̃_{k,ℓ}^H Ĝ_k A d_{i,v}` and the
/// quantities shared by the bound and its gradients.
#[derive(Debug, Clone)]
pub(crate) struct Couplings {
    /// Estimated effective channel per user, `n_r x n_ant`.
    pub g: Vec<Array2<C64>>,
    /// `Ĝ_k A D`, `n_r x (k l)` per user.
    pub gf: Vec<Array2<C64>>,
    /// `C_k^H Ĝ_k A D`, `l x (k l)` per user.
    pub s: Vec<Array2<C64>>,
    pub hybrid: Array2<C64>,
    pub d_norm: Vec<f64>,
    pub signal_factor: Vec<f64>,
    pub inflation: Vec<f64>,
    pub sigma2: f64,
}

impl Couplings {
    pub fn new(vars: &DesignVariables, ch: &ChannelRealization, sigma2: f64) -> Result<Self> {
        let dims = &ch.dims;
        vars.check_shapes(dims)?;
        let hybrid = vars.hybrid(dims);
        let d_norm = vars.d.columns().into_iter().map(|c| norm(&c)).collect();
        let mut g = Vec::with_capacity(dims.k);
        let mut gf = Vec::with_capacity(dims.k);
        let mut s = Vec::with_capacity(dims.k);
        let mut sf = Vec::with_capacity(dims.k);
        let mut infl = Vec::with_capacity(dims.k);
        for k in 0..dims.k {
            let gk = apply_cascade(dims, &ch.estimate[k].view(), &vars.theta.view());
            let gfk = gk.dot(&hybrid);
            let ck = vars.c.slice(ndarray::s![.., k * dims.l..(k + 1) * dims.l]);
            s.push(herm(&ck).dot(&gfk));
            g.push(gk);
            gf.push(gfk);
            sf.push(signal_factor(ch, k)?);
            infl.push(inflation(ch, k));
        }
        Ok(Self { g, gf, s, hybrid, d_norm, signal_factor: sf, inflation: infl, sigma2 })
    }

    /// `(X1, X2)` with `X2 = Σ_{(i,v)≠(k,ℓ)} (|s| + δ√N ‖d‖)² + σ²` and
    /// `X1 = ϱ |s_signal|² + X2`.
    pub fn denominators(&self, k: usize, ell: usize, l: usize) -> (f64, f64) {
        let own = k * l + ell;
        let row = self.s[k].row(ell);
        let mut x2 = self.sigma2;
        for (iv, z) in row.iter().enumerate() {
            if iv != own {
                let t = z.norm() + self.inflation[k] * self.d_norm[iv];
                x2 += t * t;
            }
        }
        let x1 = self.signal_factor[k] * row[own].norm_sqr() + x2;
        (x1, x2)
    }

    pub fn rate(&self, k: usize, ell: usize, l: usize) -> f64 {
        let (x1, x2) = self.denominators(k, ell, l);
        (x1 / x2).log2()
    }

    /// Robust lower-bound rates, `k x l`.
    pub fn rates(&self, dims: &SystemDims) -> Array2<f64> {
        Array2::from_shape_fn((dims.k, dims.l), |(k, ell)| self.rate(k, ell, dims.l))
    }
}

/// Rate of stream `ell` of user `k` over the true channel, with the
/// combiner as stored in `vars` (any nonzero scale).
pub fn true_rate(vars: &DesignVariables, ch: &ChannelRealization, pm: &PowerModel, k: usize, ell: usize) -> Result<f64> {
    let dims = &ch.dims;
    vars.check_shapes(dims)?;
    let own = dims.stream(k, ell);
    let c = vars.c.column(own);
    let c_sq: f64 = c.iter().map(|z| z.norm_sqr()).sum();
    if c_sq == 0.0 {
        return Err(Error::ZeroCombiner { user: k, stream: ell });
    }
    let g = apply_cascade(dims, &ch.cascaded[k].view(), &vars.theta.view());
    let row = c.mapv(|z| z.conj()).dot(&g).dot(&vars.hybrid(dims));
    let signal = row[own].norm_sqr();
    let interference: f64 = row.iter().enumerate().filter(|(iv, _)| *iv != own).map(|(_, z)| z.norm_sqr()).sum();
    Ok((1.0 + signal / (interference + c_sq * pm.sigma2)).log2())
}

/// Robust lower bound on the rate of stream `ell` of user `k`, evaluated
/// from the estimate and error radius only.
///
/// The combiner column is used as given; the bound assumes it has unit norm.
pub fn robust_rate_lb(vars: &DesignVariables, ch: &ChannelRealization, pm: &PowerModel, k: usize, ell: usize) -> Result<f64> {
    if k >= ch.dims.k || ell >= ch.dims.l {
        return Err(Error::Shape(format!("stream ({k}, {ell}) out of range")));
    }
    Ok(Couplings::new(vars, ch, pm.sigma2)?.rate(k, ell, ch.dims.l))
}

/// All lower-bound rates, `k x l`.
pub fn robust_rates(vars: &DesignVariables, ch: &ChannelRealization, pm: &PowerModel) -> Result<Array2<f64>> {
    Ok(Couplings::new(vars, ch, pm.sigma2)?.rates(&ch.dims))
}

/// All true rates, `k x l`.
pub fn true_rates(vars: &DesignVariables, ch: &ChannelRealization, pm: &PowerModel) -> Result<Array2<f64>> {
    let dims = &ch.dims;
    let mut out = Array2::zeros((dims.k, dims.l));
    for k in 0..dims.k {
        for ell in 0..dims.l {
            out[[k, ell]] = true_rate(vars, ch, pm, k, ell)?;
        }
    }
    Ok(out)
}

pub fn sum_rate_lb(vars: &DesignVariables, ch: &ChannelRealization, pm: &PowerModel) -> Result<f64> {
    Ok(robust_rates(vars, ch, pm)?.sum())
}

/// `P_BS + ξ‖D‖_F² + M N_T P_RF + N_RIS P_θ + Σ_k (P_UE,k + P_R,k)`.
pub fn total_power(vars: &DesignVariables, dims: &SystemDims, pm: &PowerModel) -> f64 {
    pm.static_power(dims) + pm.xi * vars.transmit_power()
}

/// Energy-efficiency lower bound in Mbit/J.
pub fn ee_lb(vars: &DesignVariables, ch: &ChannelRealization, pm: &PowerModel) -> Result<f64> {
    Ok(pm.ee_scale() * sum_rate_lb(vars, ch, pm)? / total_power(vars, &ch.dims, pm))
}

/// Energy efficiency over the true channel, in Mbit/J.
pub fn true_ee(vars: &DesignVariables, ch: &ChannelRealization, pm: &PowerModel) -> Result<f64> {
    Ok(pm.ee_scale() * true_rates(vars, ch, pm)?.sum() / total_power(vars, &ch.dims, pm))
}

/// `r_k = (1/w_k) Σ_ℓ R_{k,ℓ}`.
pub fn weighted_user_rates(rates: &Array2<f64>, weights: &[f64]) -> Array1<f64> {
    Array1::from_iter(rates.rows().into_iter().zip(weights).map(|(r, w)| r.sum() / w))
}

/// Jain's index `(Σ r)² / (K Σ r²)`. An all-zero vector is perfectly fair (1).
pub fn jain_index(r: &ArrayView1<f64>) -> f64 {
    let sum: f64 = r.sum();
    let sq: f64 = r.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        1.0
    } else {
        sum * sum / (r.len() as f64 * sq)
    }
}

/// `ρK Σ r_k² − (Σ r_k)² + μ`.
pub fn penalty_from_user_rates(r: &ArrayView1<f64>, rho: f64, mu: f64) -> f64 {
    let sum: f64 = r.sum();
    let sq: f64 = r.iter().map(|v| v * v).sum();
    rho * r.len() as f64 * sq - sum * sum + mu
}

/// Fairness penalty at `vars.mu`.
pub fn penalty_g(vars: &DesignVariables, ch: &ChannelRealization, pm: &PowerModel, spec: &FairnessSpec) -> Result<f64> {
    let r = weighted_user_rates(&robust_rates(vars, ch, pm)?, &spec.weights);
    Ok(penalty_from_user_rates(&r.view(), spec.rho, vars.mu))
}

/// `η − γ 𝒢 − 𝒢² / (2ω)`.
pub fn lagrangian_from_parts(ee: f64, g: f64, gamma: f64, omega: f64) -> f64 {
    ee - gamma * g - g * g / (2.0 * omega)
}

pub fn augmented_lagrangian(
    vars: &DesignVariables,
    ch: &ChannelRealization,
    pm: &PowerModel,
    spec: &FairnessSpec,
    gamma: f64,
    omega: f64,
) -> Result<f64> {
    Ok(evaluate(vars, ch, pm, spec, gamma, omega)?.lagrangian)
}

/// Every scalar of interest at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Lower-bound rates, `k x l`.
    pub rates: Array2<f64>,
    pub user_rates: Array1<f64>,
    pub sum_rate: f64,
    pub power: f64,
    pub ee: f64,
    pub jain: f64,
    /// Penalty without the slack.
    pub violation: f64,
    /// Penalty including the slack.
    pub penalty: f64,
    pub lagrangian: f64,
}

pub fn evaluate(
    vars: &DesignVariables,
    ch: &ChannelRealization,
    pm: &PowerModel,
    spec: &FairnessSpec,
    gamma: f64,
    omega: f64,
) -> Result<Evaluation> {
    if !(omega > 0.0) {
        return Err(Error::NonPositiveOmega(omega));
    }
    let rates = robust_rates(vars, ch, pm)?;
    Ok(evaluation_from_rates(rates, vars, &ch.dims, pm, spec, gamma, omega))
}

pub(crate) fn evaluation_from_rates(
    rates: Array2<f64>,
    vars: &DesignVariables,
    dims: &SystemDims,
    pm: &PowerModel,
    spec: &FairnessSpec,
    gamma: f64,
    omega: f64,
) -> Evaluation {
    let user_rates = weighted_user_rates(&rates, &spec.weights);
    let sum_rate = rates.sum();
    let power = total_power(vars, dims, pm);
    let ee = pm.ee_scale() * sum_rate / power;
    let violation = penalty_from_user_rates(&user_rates.view(), spec.rho, 0.0);
    let penalty = violation + vars.mu;
    Evaluation {
        jain: jain_index(&user_rates.view()),
        lagrangian: lagrangian_from_parts(ee, penalty, gamma, omega),
        rates,
        user_rates,
        sum_rate,
        power,
        ee,
        violation,
        penalty,
    }
}

/// Natural-log to bits conversion used by the gradients.
pub(crate) const INV_LN2: f64 = 1.0 / LN_2;
