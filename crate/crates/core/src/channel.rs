//! Saleh-Valenzuela BS-RIS and RIS-UE channels, the Khatri-Rao cascaded
//! channel, and the bounded CSI error model.
//!
//! Index conventions:
//!
//! - BS antennas are stacked subarray by subarray, element index fastest:
//!   entry `m * n_t + n`.
//! - RIS elements are stacked with the horizontal index fastest:
//!   entry `iy * n_x + ix`.
//! - The cascaded channel of user `k` has `n_r * m * n_t` rows ordered as
//!   `vec` of the `n_r x (m * n_t)` effective channel (column-major).

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{devec, fro_norm, khatri_rao, scale_columns};
use crate::units::{db_to_linear, wavelength};
use crate::C64;

/// Array and stream dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemDims {
    /// RF chains, one subarray each.
    pub m: usize,
    /// Antennas per subarray.
    pub n_t: usize,
    /// RIS grid width.
    pub n_x: usize,
    /// RIS grid height.
    pub n_y: usize,
    /// Users.
    pub k: usize,
    /// Streams per user.
    pub l: usize,
    /// Antennas per user.
    pub n_r: usize,
    /// Spacing between the first elements of adjacent subarrays, in half
    /// wavelengths.
    pub d_sa: f64,
}

impl SystemDims {
    /// Dimensions with contiguous subarrays (`d_sa = n_t`) and a near-square
    /// RIS of `n_ris` elements.
    pub fn new(m: usize, n_t: usize, n_ris: usize, k: usize, l: usize, n_r: usize) -> Self {
        let (n_x, n_y) = ris_grid(n_ris);
        Self {
            m,
            n_t,
            n_x,
            n_y,
            k,
            l,
            n_r,
            d_sa: n_t as f64,
        }
    }

    pub fn n_ris(&self) -> usize {
        self.n_x * self.n_y
    }

    /// Total BS antennas `m * n_t`.
    pub fn n_ant(&self) -> usize {
        self.m * self.n_t
    }

    /// Total streams `k * l`.
    pub fn n_streams(&self) -> usize {
        self.k * self.l
    }

    /// Column of stream `ell` of user `k` in the precoder and combiner.
    pub fn stream(&self, k: usize, ell: usize) -> usize {
        k * self.l + ell
    }

    /// Checks counts and stream limits.
    ///
    /// The stream-count conditions enforced are `l * k <= m` and `l <= n_r`;
    /// the literal `m <= n_t` reading is not required.
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("m", self.m),
            ("n_t", self.n_t),
            ("n_x", self.n_x),
            ("n_y", self.n_y),
            ("k", self.k),
            ("l", self.l),
            ("n_r", self.n_r),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidDims(format!("{name} must be at least 1")));
            }
        }
        if self.l * self.k > self.m {
            return Err(Error::InvalidDims(format!(
                "l * k = {} exceeds the number of RF chains m = {}",
                self.l * self.k,
                self.m
            )));
        }
        if self.l > self.n_r {
            return Err(Error::InvalidDims(format!(
                "l = {} exceeds the user antenna count n_r = {}",
                self.l, self.n_r
            )));
        }
        if !self.d_sa.is_finite() || self.d_sa < 0.0 {
            return Err(Error::InvalidDims(format!("d_sa = {} is not a valid spacing", self.d_sa)));
        }
        Ok(())
    }
}

/// Factor `n` into the most square `n_x * n_y` grid with `n_x >= n_y`.
pub fn ris_grid(n: usize) -> (usize, usize) {
    let mut n_y = (n as f64).sqrt().floor() as usize;
    while n_y > 1 && n % n_y != 0 {
        n_y -= 1;
    }
    let n_y = n_y.max(1);
    (n / n_y, n_y)
}

/// BS array response for departure angle `phi`.
pub fn bs_steering(dims: &SystemDims, phi: f64) -> Array1<C64> {
    let c = phi.cos();
    Array1::from_shape_fn(dims.n_ant(), |idx| {
        let (m, n) = (idx / dims.n_t, idx % dims.n_t);
        C64::from_polar(1.0, PI * (n as f64 + m as f64 * dims.d_sa) * c)
    })
}

/// UPA RIS response for azimuth `theta_az` and elevation `phi_el`.
pub fn ris_steering(n_x: usize, n_y: usize, theta_az: f64, phi_el: f64) -> Array1<C64> {
    let ux = theta_az.cos() * phi_el.sin();
    let uy = theta_az.sin() * phi_el.sin();
    Array1::from_shape_fn(n_x * n_y, |idx| {
        let (iy, ix) = (idx / n_x, idx % n_x);
        C64::from_polar(1.0, PI * (ix as f64 * ux + iy as f64 * uy))
    })
}

/// ULA user response for arrival angle `xi`.
pub fn ue_steering(n_r: usize, xi: f64) -> Array1<C64> {
    let c = xi.cos();
    Array1::from_shape_fn(n_r, |i| C64::from_polar(1.0, PI * i as f64 * c))
}

/// Azimuth/elevation pair seen by the RIS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RisAngles {
    pub azimuth: f64,
    pub elevation: f64,
}

/// Paths between the BS and the RIS. Index 0 is the LoS path.
#[derive(Debug, Clone, PartialEq)]
pub struct BsRisPaths {
    pub gains: Vec<C64>,
    /// Departure angle at the BS array.
    pub departure: Vec<f64>,
    /// Arrival angles at the RIS.
    pub arrival: Vec<RisAngles>,
}

/// Paths between the RIS and one user. Index 0 is the LoS path.
#[derive(Debug, Clone, PartialEq)]
pub struct RisUePaths {
    pub gains: Vec<C64>,
    /// Departure angles at the RIS.
    pub departure: Vec<RisAngles>,
    /// Arrival angle at the user array.
    pub arrival: Vec<f64>,
}

fn check_paths(n: usize, lens: [usize; 2], finite: bool) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("a channel needs at least one path".into()));
    }
    if lens.iter().any(|&l| l != n) {
        return Err(Error::Shape("path gains and angles have different lengths".into()));
    }
    if !finite {
        return Err(Error::InvalidParameter("path gains and angles must be finite".into()));
    }
    Ok(())
}

impl BsRisPaths {
    pub fn validate(&self) -> Result<()> {
        let finite = self.gains.iter().all(|g| g.is_finite())
            && self.departure.iter().all(|a| a.is_finite())
            && self
                .arrival
                .iter()
                .all(|a| a.azimuth.is_finite() && a.elevation.is_finite());
        check_paths(self.gains.len(), [self.departure.len(), self.arrival.len()], finite)
    }

    /// `H_T = Σ α a_RIS(arrival) a_BS(departure)^H`, shape `n_ris x n_ant`.
    pub fn channel(&self, dims: &SystemDims) -> Result<Array2<C64>> {
        self.validate()?;
        let mut h = Array2::zeros((dims.n_ris(), dims.n_ant()));
        for ((g, &phi), ang) in self.gains.iter().zip(&self.departure).zip(&self.arrival) {
            let ar = ris_steering(dims.n_x, dims.n_y, ang.azimuth, ang.elevation);
            let at = bs_steering(dims, phi);
            add_outer(&mut h, *g, &ar.view(), &at.view());
        }
        Ok(h)
    }
}

impl RisUePaths {
    pub fn validate(&self) -> Result<()> {
        let finite = self.gains.iter().all(|g| g.is_finite())
            && self.arrival.iter().all(|a| a.is_finite())
            && self
                .departure
                .iter()
                .all(|a| a.azimuth.is_finite() && a.elevation.is_finite());
        check_paths(self.gains.len(), [self.departure.len(), self.arrival.len()], finite)
    }

    /// `H_R = Σ α a_UE(arrival) a_RIS(departure)^H`, shape `n_r x n_ris`.
    pub fn channel(&self, dims: &SystemDims) -> Result<Array2<C64>> {
        self.validate()?;
        let mut h = Array2::zeros((dims.n_r, dims.n_ris()));
        for ((g, ang), &xi) in self.gains.iter().zip(&self.departure).zip(&self.arrival) {
            let au = ue_steering(dims.n_r, xi);
            let ar = ris_steering(dims.n_x, dims.n_y, ang.azimuth, ang.elevation);
            add_outer(&mut h, *g, &au.view(), &ar.view());
        }
        Ok(h)
    }
}

/// `h += g * x y^H`.
fn add_outer(h: &mut Array2<C64>, g: C64, x: &ArrayView1<C64>, y: &ArrayView1<C64>) {
    for (i, xi) in x.iter().enumerate() {
        let gx = g * xi;
        for (j, yj) in y.iter().enumerate() {
            h[[i, j]] += gx * yj.conj();
        }
    }
}

/// Scenario layout in metres. The RIS lies in the plane `y = ris_center.y`
/// with its element rows along `x` and columns along `z`, facing `+y`.
/// BS and user arrays are linear along `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Geometry {
    pub bs_position: [f64; 3],
    pub ris_center: [f64; 3],
    pub ue_box_min: [f64; 3],
    pub ue_box_max: [f64; 3],
    pub carrier_hz: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            bs_position: [0.0, 0.0, 10.0],
            ris_center: [15.0, -15.0, 5.0],
            ue_box_min: [15.0, -15.0, 0.0],
            ue_box_max: [30.0, 15.0, 2.0],
            carrier_hz: 28e9,
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        let all = [self.bs_position, self.ris_center, self.ue_box_min, self.ue_box_max];
        if all.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry("positions must be finite".into()));
        }
        if (0..3).any(|i| self.ue_box_min[i] > self.ue_box_max[i]) {
            return Err(Error::InvalidGeometry(
                "user box has negative extent along some axis".into(),
            ));
        }
        if !(self.carrier_hz.is_finite() && self.carrier_hz > 0.0) {
            return Err(Error::InvalidGeometry(format!("carrier {} Hz", self.carrier_hz)));
        }
        if distance(&self.bs_position, &self.ris_center) <= 0.0 {
            return Err(Error::InvalidGeometry("BS and RIS coincide".into()));
        }
        Ok(())
    }

    /// Uniform user positions inside the configured box.
    pub fn sample_ue_positions<R: Rng>(&self, k: usize, rng: &mut R) -> Vec<[f64; 3]> {
        (0..k)
            .map(|_| {
                let mut p = [0.0; 3];
                for (i, v) in p.iter_mut().enumerate() {
                    let (lo, hi) = (self.ue_box_min[i], self.ue_box_max[i]);
                    *v = if hi > lo { rng.random_range(lo..hi) } else { lo };
                }
                p
            })
            .collect()
    }
}

/// Path counts and the gain law.
///
/// The LoS amplitude is `sqrt(link_gain) * λ / (4π d)` with a uniform random
/// phase; NLoS gains are circular Gaussian with power
/// `nlos_attenuation_db` below the LoS power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathStats {
    pub bs_ris_paths: usize,
    pub ris_ue_paths: usize,
    pub nlos_attenuation_db: f64,
    /// Per-hop gain on top of free-space loss (antenna and element gains).
    pub link_gain_db: f64,
}

impl Default for PathStats {
    fn default() -> Self {
        Self {
            bs_ris_paths: 4,
            ris_ue_paths: 4,
            nlos_attenuation_db: 10.0,
            link_gain_db: 45.0,
        }
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

fn unit(from: &[f64; 3], to: &[f64; 3]) -> [f64; 3] {
    let d = distance(from, to);
    [(to[0] - from[0]) / d, (to[1] - from[1]) / d, (to[2] - from[2]) / d]
}

/// Direction `v` expressed in the RIS frame (rows along x, columns along z,
/// normal along +y).
fn ris_angles(v: &[f64; 3]) -> RisAngles {
    RisAngles {
        azimuth: v[2].atan2(v[0]),
        elevation: v[1].clamp(-1.0, 1.0).acos(),
    }
}

fn ula_angle(v: &[f64; 3]) -> f64 {
    v[0].clamp(-1.0, 1.0).acos()
}

fn cn<R: Rng>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// i.i.d. `CN(0, 1)` matrix.
pub fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<C64> {
    Array2::from_shape_simple_fn((rows, cols), || cn(rng, 1.0))
}

/// Scale `m` onto the Frobenius ball of radius `radius` if it lies outside.
pub fn project_onto_ball(m: &Array2<C64>, radius: f64) -> Array2<C64> {
    let n = fro_norm(&m.view());
    if n <= radius || n == 0.0 {
        m.clone()
    } else {
        m * C64::from(radius / n)
    }
}

fn los_amplitude(stats: &PathStats, carrier_hz: f64, d: f64) -> f64 {
    db_to_linear(stats.link_gain_db).sqrt() * wavelength(carrier_hz) / (4.0 * PI * d)
}

fn nlos_gains<R: Rng>(n: usize, los_power: f64, stats: &PathStats, rng: &mut R) -> Vec<C64> {
    let var = los_power * db_to_linear(-stats.nlos_attenuation_db);
    (1..n).map(|_| cn(rng, var)).collect()
}

/// True, estimated and cascaded channels for one drop.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub dims: SystemDims,
    /// BS to RIS, `n_ris x n_ant`.
    pub h_t: Array2<C64>,
    /// RIS to user `k`, `n_r x n_ris`.
    pub h_r: Vec<Array2<C64>>,
    /// True cascaded channel `H_T^T ⊙ H_R[k]`, `(n_r * n_ant) x n_ris`.
    pub cascaded: Vec<Array2<C64>>,
    /// Estimated cascaded channel known at the BS.
    pub estimate: Vec<Array2<C64>>,
    /// Error radius per user, Frobenius units.
    pub radius: Vec<f64>,
    /// Error matrices `cascaded - estimate`, when drawn.
    pub error: Option<Vec<Array2<C64>>>,
}

impl ChannelRealization {
    /// Assemble a realization from explicit link matrices with a perfect
    /// estimate.
    pub fn from_links(dims: SystemDims, h_t: Array2<C64>, h_r: Vec<Array2<C64>>) -> Result<Self> {
        dims.validate()?;
        if h_t.dim() != (dims.n_ris(), dims.n_ant()) {
            return Err(Error::Shape(format!("H_T has shape {:?}", h_t.dim())));
        }
        if h_r.len() != dims.k || h_r.iter().any(|h| h.dim() != (dims.n_r, dims.n_ris())) {
            return Err(Error::Shape("H_R shapes do not match the dimensions".into()));
        }
        let ht_t = h_t.t();
        let cascaded: Vec<_> = h_r.iter().map(|hr| khatri_rao(&ht_t, &hr.view())).collect();
        Ok(Self {
            dims,
            estimate: cascaded.clone(),
            radius: vec![0.0; dims.k],
            cascaded,
            h_t,
            h_r,
            error: None,
        })
    }

    /// Frobenius norm of the estimated cascaded channel of user `k`.
    pub fn estimate_norm(&self, k: usize) -> f64 {
        fro_norm(&self.estimate[k].view())
    }

    /// The same realization as seen by a transmitter that assumes its
    /// estimate is exact (zero error radius).
    pub fn assume_perfect(&self) -> Self {
        let mut out = self.clone();
        out.radius = vec![0.0; self.dims.k];
        out
    }
}

/// Draws a channel realization for users at `ue_positions`.
///
/// Deterministic in `rng_seed`.
pub fn synthesize_channels(
    dims: &SystemDims,
    geometry: &Geometry,
    stats: &PathStats,
    ue_positions: &[[f64; 3]],
    rng_seed: u64,
) -> Result<ChannelRealization> {
    dims.validate()?;
    geometry.validate()?;
    if ue_positions.len() != dims.k {
        return Err(Error::Shape(format!(
            "{} user positions for k = {}",
            ue_positions.len(),
            dims.k
        )));
    }
    if stats.bs_ris_paths == 0 || stats.ris_ue_paths == 0 {
        return Err(Error::InvalidParameter("path counts must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let bs = geometry.bs_position;
    let ris = geometry.ris_center;

    let d_t = distance(&bs, &ris);
    let amp = los_amplitude(stats, geometry.carrier_hz, d_t);
    let mut gains = vec![C64::from_polar(amp, rng.random_range(0.0..2.0 * PI))];
    gains.extend(nlos_gains(stats.bs_ris_paths, amp * amp, stats, &mut rng));
    let mut departure = vec![ula_angle(&unit(&bs, &ris))];
    let mut arrival = vec![ris_angles(&unit(&ris, &bs))];
    for _ in 1..stats.bs_ris_paths {
        departure.push(rng.random_range(0.0..PI));
        arrival.push(RisAngles {
            azimuth: rng.random_range(0.0..PI),
            elevation: rng.random_range(0.0..=PI / 2.0),
        });
    }
    let h_t = BsRisPaths { gains, departure, arrival }.channel(dims)?;

    let mut h_r = Vec::with_capacity(dims.k);
    for ue in ue_positions {
        if ue.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry("user position must be finite".into()));
        }
        let d = distance(&ris, ue);
        if d <= 0.0 {
            return Err(Error::InvalidGeometry("user coincides with the RIS".into()));
        }
        let amp = los_amplitude(stats, geometry.carrier_hz, d);
        let mut gains = vec![C64::from_polar(amp, rng.random_range(0.0..2.0 * PI))];
        gains.extend(nlos_gains(stats.ris_ue_paths, amp * amp, stats, &mut rng));
        let mut departure = vec![ris_angles(&unit(&ris, ue))];
        let mut arrival = vec![ula_angle(&unit(ue, &ris))];
        for _ in 1..stats.ris_ue_paths {
            departure.push(RisAngles {
                azimuth: rng.random_range(0.0..PI),
                elevation: rng.random_range(0.0..=PI / 2.0),
            });
            arrival.push(rng.random_range(0.0..PI));
        }
        h_r.push(RisUePaths { gains, departure, arrival }.channel(dims)?);
    }
    ChannelRealization::from_links(*dims, h_t, h_r)
}

/// How error matrices are placed inside their ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ErrorSampling {
    /// Uniform in the ball.
    #[default]
    Uniform,
    /// On the sphere of radius `δ_k`.
    Boundary,
}

/// Draws CSI errors with radius `δ_k = β ‖Ĥ_k‖_F`.
pub fn apply_csi_error(ch: &ChannelRealization, beta: f64, rng_seed: u64) -> Result<ChannelRealization> {
    apply_csi_error_with(ch, beta, rng_seed, ErrorSampling::Uniform)
}

/// As [`apply_csi_error`] with an explicit sampling mode.
///
/// The true cascaded channel is kept. With `Δ = u δ U` for a unit-Frobenius
/// Gaussian direction `U` and radial fraction `u`, the radius is the
/// positive root of `δ = β ‖H − u δ U‖_F`, so that `Ĥ = H − Δ` and
/// `δ = β ‖Ĥ‖_F` hold together.
pub fn apply_csi_error_with(
    ch: &ChannelRealization,
    beta: f64,
    rng_seed: u64,
    mode: ErrorSampling,
) -> Result<ChannelRealization> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidBeta(beta));
    }
    let mut out = ch.clone();
    if beta == 0.0 {
        out.estimate = ch.cascaded.clone();
        out.radius = vec![0.0; ch.dims.k];
        out.error = Some(ch.cascaded.iter().map(|h| Array2::zeros(h.dim())).collect());
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut estimate = Vec::with_capacity(ch.dims.k);
    let mut radius = Vec::with_capacity(ch.dims.k);
    let mut error = Vec::with_capacity(ch.dims.k);
    for h in &ch.cascaded {
        let (rows, cols) = h.dim();
        let g = gaussian_matrix(rows, cols, &mut rng);
        let dir = &g / C64::from(fro_norm(&g.view()));
        let u = match mode {
            ErrorSampling::Uniform => {
                let r: f64 = rng.random();
                r.powf(1.0 / (2.0 * (rows * cols) as f64))
            }
            ErrorSampling::Boundary => 1.0,
        };
        let h_sq: f64 = h.iter().map(|z| z.norm_sqr()).sum();
        let proj: f64 = h.iter().zip(dir.iter()).map(|(a, b)| (a.conj() * b).re).sum();
        let b2 = beta * beta;
        let qa = 1.0 - b2 * u * u;
        let qb = 2.0 * b2 * u * proj;
        let qc = b2 * h_sq;
        let delta = (-qb + (qb * qb + 4.0 * qa * qc).sqrt()) / (2.0 * qa);
        let d = &dir * C64::from(u * delta);
        estimate.push(h - &d);
        radius.push(delta);
        error.push(d);
    }
    out.estimate = estimate;
    out.radius = radius;
    out.error = Some(error);
    Ok(out)
}

/// `devec(H θ)` as an `n_r x n_ant` matrix. No modulus check on `theta`.
pub fn apply_cascade(dims: &SystemDims, h: &ArrayView2<C64>, theta: &ArrayView1<C64>) -> Array2<C64> {
    let v = h.dot(theta);
    devec(&v.view(), dims.n_r, dims.n_ant())
}

pub(crate) fn check_unit_modulus(theta: &ArrayView1<C64>, tol: f64) -> Result<()> {
    for (index, z) in theta.iter().enumerate() {
        let modulus = z.norm();
        if (modulus - 1.0).abs() > tol || !modulus.is_finite() {
            return Err(Error::NotUnitModulus { index, modulus });
        }
    }
    Ok(())
}

/// Effective channel of user `k`: `H_R[k] diag(θ) H_T` when `estimated` is
/// false, otherwise the de-vectorized `Ĥ_k θ`.
pub fn effective_channel(
    ch: &ChannelRealization,
    theta: &ArrayView1<C64>,
    k: usize,
    estimated: bool,
) -> Result<Array2<C64>> {
    if theta.len() != ch.dims.n_ris() {
        return Err(Error::Shape(format!("theta has length {}", theta.len())));
    }
    if k >= ch.dims.k {
        return Err(Error::Shape(format!("user {k} out of range")));
    }
    check_unit_modulus(theta, 1e-9)?;
    if estimated {
        Ok(apply_cascade(&ch.dims, &ch.estimate[k].view(), theta))
    } else {
        Ok(scale_columns(&ch.h_r[k].view(), theta).dot(&ch.h_t))
    }
}
