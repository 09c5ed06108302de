//! Hybrid-architecture training frames and the compressed observation model.
//!
//! Frame `m` observes `y_m = W_m^H H F_m q_m + n`. With row-major
//! vectorization of `H` this is `y_m = (W_m^H (x) (F_m q_m)^T) vec{H}`, and
//! stacking the `M` frames gives `y = Phi vec{H} = Phi Psi h + n`.

use std::f64::consts::PI;

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_complex_normal, ArrayGeometry};
use crate::error::{Error, Result};
use crate::linalg::{norm_sqr, CMatrix};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub tx: ArrayGeometry,
    pub rx: ArrayGeometry,
    pub l_t: usize,
    pub l_r: usize,
    pub n_s: usize,
    pub k_sub: usize,
    pub m_frames: usize,
}

impl SystemConfig {
    pub fn n_t(&self) -> usize {
        self.tx.len()
    }

    pub fn n_r(&self) -> usize {
        self.rx.len()
    }

    /// Rows of the stacked measurement matrix.
    pub fn measurements(&self) -> usize {
        self.m_frames * self.l_r
    }

    pub fn validate(&self) -> Result<()> {
        let (n_t, n_r) = (self.n_t(), self.n_r());
        if !(self.n_s >= 1 && self.n_s <= self.l_t && self.l_t < n_t) {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= N_s <= L_t < N_t, got N_s={}, L_t={}, N_t={n_t}",
                self.n_s, self.l_t
            )));
        }
        if !(self.n_s <= self.l_r && self.l_r < n_r) {
            return Err(Error::InvalidConfig(format!(
                "need N_s <= L_r < N_r, got N_s={}, L_r={}, N_r={n_r}",
                self.n_s, self.l_r
            )));
        }
        if self.n_s != self.l_t {
            return Err(Error::InvalidConfig("training uses N_s = L_t".into()));
        }
        if self.k_sub == 0 || self.m_frames == 0 {
            return Err(Error::InvalidConfig("K and M must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingFrame<T> {
    /// `N_t x L_t` training precoder.
    pub f_tr: CMatrix<T>,
    /// `N_r x L_r` training combiner.
    pub w_tr: CMatrix<T>,
    /// Frequency-flat pilot symbol, length `L_t`.
    pub q: Vec<Complex<T>>,
}

#[derive(Debug, Clone)]
pub struct MeasurementSetup<T> {
    pub frames: Vec<TrainingFrame<T>>,
    /// `(M L_r) x (N_t N_r)`
    pub phi: CMatrix<T>,
    /// `(N_t N_r) x (G_r G_t)`
    pub psi: CMatrix<T>,
    /// `Phi Psi`
    pub a_eff: CMatrix<T>,
}

#[derive(Debug, Clone)]
pub struct Observation<T> {
    pub y: Vec<Complex<T>>,
    pub noise_var: T,
    pub snr_db: f64,
}

/// What is being observed.
#[derive(Debug, Clone, Copy)]
pub enum Signal<'a, T> {
    /// Virtual-channel coefficients, observed through `Phi Psi`.
    Sparse(&'a [Complex<T>]),
    /// A channel matrix, observed through `Phi`.
    Channel(&'a CMatrix<T>),
}

/// Matrix of i.i.d. uniform phases with a fixed entry modulus.
pub fn random_constant_modulus<T: Real, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    modulus: T,
    rng: &mut R,
) -> Result<CMatrix<T>> {
    if !(modulus > T::zero()) {
        return Err(Error::InvalidConfig("modulus must be positive".into()));
    }
    Ok(CMatrix::from_fn(rows, cols, |_, _| {
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        Complex::from_polar(modulus, T::lit(phase))
    }))
}

/// One training frame: random analog beams with identity baseband factors and
/// a Gaussian pilot normalized to `||q||^2 = L_t`.
pub fn build_frame<T: Real, R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<TrainingFrame<T>> {
    cfg.validate()?;
    let (n_t, n_r) = (cfg.n_t(), cfg.n_r());
    let f_tr = random_constant_modulus(n_t, cfg.l_t, T::lit(1.0 / (n_t as f64).sqrt()), rng)?;
    let w_tr = random_constant_modulus(n_r, cfg.l_r, T::lit(1.0 / (n_r as f64).sqrt()), rng)?;
    let mut q: Vec<Complex<T>> = (0..cfg.l_t).map(|_| sample_complex_normal(rng, 1.0)).collect();
    let power = norm_sqr(&q);
    let gain = (T::lit(cfg.l_t as f64) / power).sqrt();
    for z in &mut q {
        *z = *z * gain;
    }
    Ok(TrainingFrame { f_tr, w_tr, q })
}

/// `Phi_m` for a single frame, shape `L_r x N_t N_r`, acting on the
/// row-major vectorized channel.
pub fn frame_measurement_matrix<T: Real>(frame: &TrainingFrame<T>) -> Result<CMatrix<T>> {
    let fq = frame.f_tr.matvec(&frame.q)?;
    let (n_r, l_r) = frame.w_tr.shape();
    let n_t = fq.len();
    let mut phi = CMatrix::zeros(l_r, n_t * n_r);
    for i in 0..l_r {
        for r in 0..n_r {
            let w = frame.w_tr[(r, i)].conj();
            for (c, f) in fq.iter().enumerate() {
                phi[(i, r * n_t + c)] = w * f;
            }
        }
    }
    Ok(phi)
}

/// Stacks the frame blocks in frame order and forms `Phi Psi`.
pub fn stack_measurements<T: Real>(frames: Vec<TrainingFrame<T>>, psi: CMatrix<T>) -> Result<MeasurementSetup<T>> {
    if frames.is_empty() {
        return Err(Error::Empty("at least one training frame is required".into()));
    }
    let shape = (frames[0].f_tr.shape(), frames[0].w_tr.shape());
    if frames.iter().any(|f| (f.f_tr.shape(), f.w_tr.shape()) != shape) {
        return Err(Error::Dimension("training frames differ in shape".into()));
    }
    let blocks = frames
        .iter()
        .map(frame_measurement_matrix)
        .collect::<Result<Vec<_>>>()?;
    let phi = CMatrix::vstack(&blocks)?;
    if psi.rows() != phi.cols() {
        return Err(Error::Dimension(format!(
            "dictionary has {} rows, measurement matrix {} columns",
            psi.rows(),
            phi.cols()
        )));
    }
    let a_eff = phi.matmul(&psi)?;
    Ok(MeasurementSetup {
        frames,
        phi,
        psi,
        a_eff,
    })
}

/// Draws `cfg.m_frames` frames and stacks them.
pub fn build_setup<T: Real, R: Rng + ?Sized>(
    cfg: &SystemConfig,
    psi: CMatrix<T>,
    rng: &mut R,
) -> Result<MeasurementSetup<T>> {
    let frames = (0..cfg.m_frames)
        .map(|_| build_frame(cfg, rng))
        .collect::<Result<Vec<_>>>()?;
    stack_measurements(frames, psi)
}

impl<T: Real> MeasurementSetup<T> {
    /// Noiseless measurement of `signal`.
    pub fn measure(&self, signal: Signal<'_, T>) -> Result<Vec<Complex<T>>> {
        match signal {
            Signal::Sparse(h) => self.a_eff.matvec(h),
            Signal::Channel(h) => self.phi.matvec(h.as_slice()),
        }
    }
}

/// Noisy observation at the given SNR; `snr_db = +inf` is noiseless.
///
/// The noise variance is calibrated against the realized signal power:
/// `sigma^2 = (||s||^2 / len(s)) 10^(-snr/10)`.
pub fn observe<T: Real, R: Rng + ?Sized>(
    setup: &MeasurementSetup<T>,
    signal: Signal<'_, T>,
    snr_db: f64,
    rng: &mut R,
) -> Result<Observation<T>> {
    let mut y = setup.measure(signal)?;
    if snr_db == f64::INFINITY {
        return Ok(Observation {
            y,
            noise_var: T::zero(),
            snr_db,
        });
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidConfig("SNR is NaN".into()));
    }
    let power = norm_sqr(&y).as_f64() / y.len() as f64;
    if power == 0.0 {
        return Err(Error::ZeroSignal { snr_db });
    }
    let noise_var = power * 10f64.powf(-snr_db / 10.0);
    for v in &mut y {
        *v += sample_complex_normal::<T, _>(rng, noise_var);
    }
    Ok(Observation {
        y,
        noise_var: T::lit(noise_var),
        snr_db,
    })
}
