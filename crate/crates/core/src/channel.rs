//! Synthetic frequency-selective UM-MIMO channels and the on-grid
//! (virtual channel) dictionary.
//!
//! A channel realization is a set of `L` propagation paths. Each delay tap is
//! `H_d = sqrt(N_t N_r / L) * sum_l alpha_l p_rc(d T_s - tau_l) a_R a_T^H`
//! and subcarrier `k` of `K` is `H[k] = sum_d H_d exp(-j 2 pi k d / K)`.
//!
//! Steering vectors follow the UPA convention: the x-axis index is the slow
//! (outer) index and the z-axis index the fast one.

use std::f64::consts::PI;

use num_complex::Complex;
use num_traits::Zero;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::scalar::Real;

/// Uniform planar array with `n_x * n_z` elements in the x-z plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_x: usize,
    pub n_z: usize,
}

impl ArrayGeometry {
    pub fn new(n_x: usize, n_z: usize) -> Result<Self> {
        if n_x == 0 || n_z == 0 {
            return Err(Error::InvalidConfig(format!(
                "array geometry {n_x}x{n_z} must have at least one element per axis"
            )));
        }
        Ok(Self { n_x, n_z })
    }

    pub fn len(&self) -> usize {
        self.n_x * self.n_z
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Azimuth `theta` and elevation `phi` of a path, in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction<T> {
    pub azimuth: T,
    pub elevation: T,
}

impl<T: Real> Direction<T> {
    pub fn new(azimuth: T, elevation: T) -> Self {
        Self { azimuth, elevation }
    }

    /// Spatial frequencies `(sin(theta) cos(phi), sin(phi))`.
    pub fn spatial(&self) -> (T, T) {
        (self.azimuth.sin() * self.elevation.cos(), self.elevation.sin())
    }

    /// The physical direction with the given spatial frequencies, if any.
    pub fn from_spatial(ux: T, uz: T) -> Option<Self> {
        if uz.abs() > T::one() {
            return None;
        }
        let elevation = uz.asin();
        let c = elevation.cos();
        if c == T::zero() {
            return (ux == T::zero()).then_some(Self::new(T::zero(), elevation));
        }
        let s = ux / c;
        if s.abs() > T::one() + T::lit(1e-12) {
            return None;
        }
        let s = s.max(-T::one()).min(T::one());
        Some(Self::new(s.asin(), elevation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path<T> {
    pub gain: Complex<T>,
    /// Seconds.
    pub delay: T,
    pub aoa: Direction<T>,
    pub aod: Direction<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet<T> {
    paths: Vec<Path<T>>,
    sampling_period: T,
    num_taps: usize,
}

impl<T: Real> PathSet<T> {
    /// Validates delays against `[0, num_taps * T_s)` and angles against their
    /// domains. An empty path list is accepted and describes the zero channel.
    pub fn new(paths: Vec<Path<T>>, sampling_period: T, num_taps: usize) -> Result<Self> {
        if !(sampling_period > T::zero()) {
            return Err(Error::InvalidConfig("sampling period must be positive".into()));
        }
        if num_taps == 0 {
            return Err(Error::InvalidConfig("at least one delay tap is required".into()));
        }
        let horizon = sampling_period * T::lit(num_taps as f64);
        let half_pi = T::lit(PI / 2.0);
        let pi = T::lit(PI);
        for (i, p) in paths.iter().enumerate() {
            if !(p.delay >= T::zero() && p.delay < horizon) {
                return Err(Error::InvalidConfig(format!(
                    "path {i}: delay {} outside [0, {})",
                    p.delay, horizon
                )));
            }
            for d in [p.aoa, p.aod] {
                if d.elevation.abs() > half_pi || d.azimuth.abs() > pi {
                    return Err(Error::InvalidConfig(format!(
                        "path {i}: angles ({}, {}) outside their domains",
                        d.azimuth, d.elevation
                    )));
                }
            }
        }
        Ok(Self {
            paths,
            sampling_period,
            num_taps,
        })
    }

    pub fn paths(&self) -> &[Path<T>] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn sampling_period(&self) -> T {
        self.sampling_period
    }

    pub fn num_taps(&self) -> usize {
        self.num_taps
    }
}

/// Parameters of the random path generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub num_paths: usize,
    pub num_taps: usize,
    pub sampling_period: f64,
    pub rolloff: f64,
    /// Restrict delays to integer multiples of the sampling period.
    pub tap_aligned: bool,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            num_paths: 4,
            num_taps: 4,
            sampling_period: 1e-9,
            rolloff: 0.8,
            tap_aligned: false,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_paths == 0 {
            return Err(Error::InvalidConfig("num_paths must be at least 1".into()));
        }
        if self.num_taps == 0 {
            return Err(Error::InvalidConfig("num_taps must be at least 1".into()));
        }
        if !(self.sampling_period > 0.0) {
            return Err(Error::InvalidConfig("sampling_period must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return Err(Error::InvalidConfig("rolloff must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Angular grid sizes at Rx and Tx.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub g_rx: usize,
    pub g_rz: usize,
    pub g_tx: usize,
    pub g_tz: usize,
}

impl GridSpec {
    /// One grid point per antenna on every axis.
    pub fn critical(rx: ArrayGeometry, tx: ArrayGeometry) -> Self {
        Self {
            g_rx: rx.n_x,
            g_rz: rx.n_z,
            g_tx: tx.n_x,
            g_tz: tx.n_z,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.g_rx, self.g_rz, self.g_tx, self.g_tz].contains(&0) {
            return Err(Error::InvalidConfig("grid sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn g_r(&self) -> usize {
        self.g_rx * self.g_rz
    }

    pub fn g_t(&self) -> usize {
        self.g_tx * self.g_tz
    }
}

/// A grid point in spatial-frequency coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint<T> {
    pub ux: T,
    pub uz: T,
}

impl<T: Real> GridPoint<T> {
    /// Physical angles of the grid point; `None` when `ux^2 + uz^2 > 1`.
    pub fn angles(&self) -> Option<Direction<T>> {
        Direction::from_spatial(self.ux, self.uz)
    }
}

/// Per-subcarrier channel matrices of one realization.
#[derive(Debug, Clone)]
pub struct ChannelRealization<T> {
    pub per_subcarrier: Vec<CMatrix<T>>,
    pub source: PathSet<T>,
}

/// The gridded steering matrices and `Psi = A_R (x) conj(A_T)`.
#[derive(Debug, Clone)]
pub struct Dictionary<T> {
    pub a_r: CMatrix<T>,
    pub a_t: CMatrix<T>,
    pub psi: CMatrix<T>,
}

fn phase_ramp<T: Real>(n: usize, u: T) -> impl Iterator<Item = Complex<T>> {
    let step = -T::lit(PI) * u;
    (0..n).map(move |i| Complex::from_polar(T::one(), step * T::lit(i as f64)))
}

/// Steering vector for spatial frequencies `(ux, uz)`.
pub fn steering_from_spatial<T: Real>(geom: ArrayGeometry, ux: T, uz: T) -> Vec<Complex<T>> {
    let norm = T::one() / T::lit(geom.len() as f64).sqrt();
    let z: Vec<_> = phase_ramp(geom.n_z, uz).collect();
    let mut out = Vec::with_capacity(geom.len());
    for ex in phase_ramp(geom.n_x, ux) {
        for &ez in &z {
            out.push(ex * ez * norm);
        }
    }
    out
}

/// Unit-norm UPA steering vector `a(theta, phi)`.
pub fn steering_vector<T: Real>(geom: ArrayGeometry, theta: T, phi: T) -> Vec<Complex<T>> {
    let (ux, uz) = Direction::new(theta, phi).spatial();
    steering_from_spatial(geom, ux, uz)
}

/// Raised-cosine pulse evaluated at `t`.
pub fn raised_cosine<T: Real>(t: T, sampling_period: T, rolloff: T) -> T {
    let x = t / sampling_period;
    let pi = T::lit(PI);
    let sinc = |v: T| {
        if v == T::zero() {
            T::one()
        } else {
            (pi * v).sin() / (pi * v)
        }
    };
    if rolloff == T::zero() {
        return sinc(x);
    }
    let two = T::lit(2.0);
    let denom = T::one() - (two * rolloff * x).powi(2);
    if denom.abs() < T::lit(1e-10) {
        // limit at t = +-T_s / (2 rolloff)
        return pi / T::lit(4.0) * sinc(T::one() / (two * rolloff));
    }
    sinc(x) * (pi * rolloff * x).cos() / denom
}

fn complex_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex<T> {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex::new(T::lit(re * s), T::lit(im * s))
}

/// Draws a circularly-symmetric complex Gaussian sample `CN(0, variance)`.
pub fn sample_complex_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex<T> {
    complex_normal(rng, variance)
}

/// Draws `L` paths: `CN(0,1)` gains, uniform delays and uniform angles.
pub fn sample_paths<T: Real, R: Rng + ?Sized>(rng: &mut R, params: &ChannelParams) -> Result<PathSet<T>> {
    params.validate()?;
    let ts = params.sampling_period;
    let mut paths = Vec::with_capacity(params.num_paths);
    for _ in 0..params.num_paths {
        let gain = complex_normal(rng, 1.0);
        let delay = if params.tap_aligned {
            rng.random_range(0..params.num_taps) as f64 * ts
        } else {
            rng.random::<f64>() * (params.num_taps - 1) as f64 * ts
        };
        let direction = |rng: &mut R| {
            let az = rng.random_range(-PI..=PI);
            let el = rng.random_range(-PI / 2.0..=PI / 2.0);
            Direction::new(T::lit(az), T::lit(el))
        };
        let aoa = direction(rng);
        let aod = direction(rng);
        paths.push(Path {
            gain,
            delay: T::lit(delay),
            aoa,
            aod,
        });
    }
    PathSet::new(paths, T::lit(ts), params.num_taps)
}

fn path_scale<T: Real>(rx: ArrayGeometry, tx: ArrayGeometry, num_paths: usize) -> T {
    T::lit((rx.len() * tx.len()) as f64 / num_paths as f64).sqrt()
}

/// Adds `coeff * a_R a_T^H` into `h`.
fn add_rank_one<T: Real>(h: &mut CMatrix<T>, coeff: Complex<T>, a_r: &[Complex<T>], a_t: &[Complex<T>]) {
    let cols = h.cols();
    let data = h.as_mut_slice();
    for (i, &ar) in a_r.iter().enumerate() {
        let s = coeff * ar;
        for (o, at) in data[i * cols..(i + 1) * cols].iter_mut().zip(a_t) {
            *o += s * at.conj();
        }
    }
}

/// Channel matrix of delay tap `d`, shape `N_r x N_t`.
pub fn delay_tap_channel<T: Real>(
    paths: &PathSet<T>,
    rx: ArrayGeometry,
    tx: ArrayGeometry,
    d: usize,
    rolloff: T,
) -> Result<CMatrix<T>> {
    if d >= paths.num_taps() {
        return Err(Error::InvalidConfig(format!("tap {d} outside 0..{}", paths.num_taps())));
    }
    let mut h = CMatrix::zeros(rx.len(), tx.len());
    if paths.is_empty() {
        return Ok(h);
    }
    let scale = path_scale::<T>(rx, tx, paths.len());
    let ts = paths.sampling_period();
    for p in paths.paths() {
        let pulse = raised_cosine(T::lit(d as f64) * ts - p.delay, ts, rolloff);
        let (rux, ruz) = p.aoa.spatial();
        let (tux, tuz) = p.aod.spatial();
        let a_r = steering_from_spatial(rx, rux, ruz);
        let a_t = steering_from_spatial(tx, tux, tuz);
        add_rank_one(&mut h, p.gain * (scale * pulse), &a_r, &a_t);
    }
    Ok(h)
}

fn dft_phase<T: Real>(k: usize, d: usize, k_sub: usize) -> Complex<T> {
    // reduce k*d mod K first so large products keep full phase precision
    let r = (k * d) % k_sub;
    Complex::from_polar(T::one(), -T::lit(2.0 * PI * r as f64 / k_sub as f64))
}

/// All `K` subcarrier matrices of a realization.
pub fn frequency_channel<T: Real>(
    paths: &PathSet<T>,
    rx: ArrayGeometry,
    tx: ArrayGeometry,
    k_sub: usize,
    rolloff: T,
) -> Result<ChannelRealization<T>> {
    if k_sub == 0 {
        return Err(Error::InvalidConfig("subcarrier count must be at least 1".into()));
    }
    let taps = (0..paths.num_taps())
        .map(|d| delay_tap_channel(paths, rx, tx, d, rolloff))
        .collect::<Result<Vec<_>>>()?;
    let mut per_subcarrier = Vec::with_capacity(k_sub);
    for k in 0..k_sub {
        let mut h = CMatrix::zeros(rx.len(), tx.len());
        for (d, hd) in taps.iter().enumerate() {
            h.axpy(dft_phase(k, d, k_sub), hd)?;
        }
        per_subcarrier.push(h);
    }
    Ok(ChannelRealization {
        per_subcarrier,
        source: paths.clone(),
    })
}

/// Frequency-domain gain of one path on subcarrier `k`, including the
/// `sqrt(N_t N_r / L)` normalization.
fn path_frequency_gain<T: Real>(
    p: &Path<T>,
    scale: T,
    sampling_period: T,
    num_taps: usize,
    k: usize,
    k_sub: usize,
    rolloff: T,
) -> Complex<T> {
    let mut acc = Complex::zero();
    for d in 0..num_taps {
        let pulse = raised_cosine(T::lit(d as f64) * sampling_period - p.delay, sampling_period, rolloff);
        acc = acc + dft_phase::<T>(k, d, k_sub) * pulse;
    }
    p.gain * acc * scale
}

/// Single subcarrier `H[k]`, computed path by path.
pub fn subcarrier_channel<T: Real>(
    paths: &PathSet<T>,
    rx: ArrayGeometry,
    tx: ArrayGeometry,
    k: usize,
    k_sub: usize,
    rolloff: T,
) -> Result<CMatrix<T>> {
    if k >= k_sub {
        return Err(Error::InvalidConfig(format!("subcarrier {k} outside 0..{k_sub}")));
    }
    let mut h = CMatrix::zeros(rx.len(), tx.len());
    if paths.is_empty() {
        return Ok(h);
    }
    let scale = path_scale::<T>(rx, tx, paths.len());
    for p in paths.paths() {
        let g = path_frequency_gain(p, scale, paths.sampling_period(), paths.num_taps(), k, k_sub, rolloff);
        let (rux, ruz) = p.aoa.spatial();
        let (tux, tuz) = p.aod.spatial();
        add_rank_one(
            &mut h,
            g,
            &steering_from_spatial(rx, rux, ruz),
            &steering_from_spatial(tx, tux, tuz),
        );
    }
    Ok(h)
}

fn axis_frequencies<T: Real>(g: usize) -> impl Iterator<Item = T> {
    let step = 2.0 / g as f64;
    (1..=g).map(move |i| T::lit(-1.0 + step * i as f64))
}

/// The `g_x * g_z` grid points; x-axis index major.
pub fn grid_angles<T: Real>(g_x: usize, g_z: usize) -> Vec<GridPoint<T>> {
    let zs: Vec<T> = axis_frequencies(g_z).collect();
    axis_frequencies(g_x)
        .flat_map(|ux| zs.iter().map(move |&uz| GridPoint { ux, uz }))
        .collect()
}

fn steering_matrix<T: Real>(geom: ArrayGeometry, g_x: usize, g_z: usize) -> CMatrix<T> {
    let points = grid_angles::<T>(g_x, g_z);
    let mut m = CMatrix::zeros(geom.len(), points.len());
    for (j, p) in points.iter().enumerate() {
        for (i, v) in steering_from_spatial(geom, p.ux, p.uz).into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}

/// Builds `A_R` (`N_r x G_r`), `A_T` (`N_t x G_t`) and `Psi = A_R (x) conj(A_T)`.
///
/// Column `g_r * G_t + g_t` of `Psi` maps grid cell `(g_r, g_t)` onto the
/// row-major vectorized channel.
pub fn dictionary<T: Real>(rx: ArrayGeometry, tx: ArrayGeometry, grid: GridSpec) -> Result<Dictionary<T>> {
    grid.validate()?;
    let a_r = steering_matrix(rx, grid.g_rx, grid.g_rz);
    let a_t = steering_matrix(tx, grid.g_tx, grid.g_tz);
    let psi = a_r.kron(&a_t.conj());
    Ok(Dictionary { a_r, a_t, psi })
}

/// Index of the grid point matching `(ux, uz)`, treating spatial frequency
/// modulo 2.
fn grid_index<T: Real>(ux: T, uz: T, g_x: usize, g_z: usize) -> Option<usize> {
    let snap = |u: T, g: usize| -> Option<usize> {
        // u = -1 + 2 (i + 1) / g  =>  i = g (u + 1) / 2 - 1
        let pos = T::lit(g as f64) * (u + T::one()) / T::lit(2.0) - T::one();
        let r = pos.round();
        if (pos - r).abs() > T::lit(1e-7) {
            return None;
        }
        let gi = g as i64;
        Some(((r.to_i64()? % gi + gi) % gi) as usize)
    };
    Some(snap(ux, g_x)? * g_z + snap(uz, g_z)?)
}

/// Exactly sparse virtual-channel vector `h[k]` for paths lying on the grid,
/// so that `vec{H[k]} = Psi h[k]`.
pub fn on_grid_sparse_vector<T: Real>(
    paths: &PathSet<T>,
    rx: ArrayGeometry,
    tx: ArrayGeometry,
    grid: GridSpec,
    k: usize,
    k_sub: usize,
    rolloff: T,
) -> Result<Vec<Complex<T>>> {
    grid.validate()?;
    if k >= k_sub {
        return Err(Error::InvalidConfig(format!("subcarrier {k} outside 0..{k_sub}")));
    }
    let mut h = vec![Complex::zero(); grid.g_r() * grid.g_t()];
    if paths.is_empty() {
        return Ok(h);
    }
    // Steering vectors are normalized; Psi columns carry the same
    // normalization, so the coefficient is the path gain itself.
    let scale = path_scale::<T>(rx, tx, paths.len());
    for (i, p) in paths.paths().iter().enumerate() {
        let (rux, ruz) = p.aoa.spatial();
        let (tux, tuz) = p.aod.spatial();
        let gr = grid_index(rux, ruz, grid.g_rx, grid.g_rz).ok_or(Error::OffGrid { index: i })?;
        let gt = grid_index(tux, tuz, grid.g_tx, grid.g_tz).ok_or(Error::OffGrid { index: i })?;
        h[gr * grid.g_t() + gt] +=
            path_frequency_gain(p, scale, paths.sampling_period(), paths.num_taps(), k, k_sub, rolloff);
    }
    Ok(h)
}
