use num_complex::Complex;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm_sqr, CMatrix};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmpConfig {
    pub iterations: usize,
    /// Threshold multiplier; the threshold at iteration `t` is `lambda * sigma_t`.
    pub lambda: f64,
    /// Optional early stop once `||y - A h||^2` drops below this value.
    pub tolerance: Option<f64>,
    /// Rescale the operator to unit average column norm before iterating.
    pub normalize_operator: bool,
}

impl Default for AmpConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            lambda: 1.5,
            tolerance: None,
            normalize_operator: true,
        }
    }
}

impl AmpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("AMP needs at least one iteration".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidConfig("AMP lambda must be positive".into()));
        }
        Ok(())
    }
}

/// Iterate state after an AMP step, exposed to [`amp_traced`] observers.
#[derive(Debug, Clone)]
pub struct AmpState<T> {
    pub iteration: usize,
    /// Estimate `h_{t+1}` in the (possibly normalized) operator's scale.
    pub h: Vec<Complex<T>>,
    /// Pseudo-data `z_t`.
    pub z: Vec<Complex<T>>,
    /// Residual `r_t`.
    pub r: Vec<Complex<T>>,
    pub sigma2: T,
    pub threshold: T,
    pub b: Complex<T>,
    pub c: Complex<T>,
}

/// Complex soft thresholding: shrinks the modulus by `t`, keeps the phase.
pub fn soft_threshold_complex<T: Real>(z: Complex<T>, t: T) -> Complex<T> {
    let m = z.norm();
    if m <= t {
        return Complex::zero();
    }
    z * ((m - t) / m)
}

/// Onsager coefficients `(b, c)`: the averaged Wirtinger derivatives
/// `d eta / d z` and `d eta / d z*` of the soft threshold, divided by `m_rows`.
pub fn onsager_coeffs<T: Real>(z: &[Complex<T>], t: T, m_rows: usize) -> (Complex<T>, Complex<T>) {
    let two = T::lit(2.0);
    let mut b = T::zero();
    let mut c = Complex::zero();
    for &zi in z {
        let m = zi.norm();
        if m <= t {
            continue;
        }
        b += T::one() - t / (two * m);
        c = c + zi * zi * (t / (two * m * m * m));
    }
    let inv = T::one() / T::lit(m_rows as f64);
    (Complex::new(b * inv, T::zero()), c * inv)
}

/// Complex AMP with both Onsager terms, run for `cfg.iterations` steps.
pub fn amp<T: Real>(y: &[Complex<T>], a: &CMatrix<T>, cfg: &AmpConfig) -> Result<Vec<Complex<T>>> {
    amp_traced(y, a, cfg, |_| {})
}

/// [`amp`] with a callback after every iteration.
pub fn amp_traced<T: Real>(
    y: &[Complex<T>],
    a: &CMatrix<T>,
    cfg: &AmpConfig,
    mut observe: impl FnMut(&AmpState<T>),
) -> Result<Vec<Complex<T>>> {
    cfg.validate()?;
    let (m, n) = a.shape();
    if y.len() != m {
        return Err(Error::Dimension(format!("observation length {} vs {m} rows", y.len())));
    }
    let fro = a.frobenius_norm();
    let scale = if cfg.normalize_operator && fro > T::zero() {
        T::lit(n as f64).sqrt() / fro
    } else {
        T::one()
    };
    let lambda = T::lit(cfg.lambda);
    let inv_m = T::one() / T::lit(m as f64);

    let mut h = vec![Complex::zero(); n];
    let mut r_prev = vec![Complex::zero(); m];
    let (mut b, mut c) = (Complex::zero(), Complex::zero());

    for t in 0..cfg.iterations {
        let ah = a.matvec(&h)?;
        let r: Vec<Complex<T>> = (0..m)
            .map(|i| y[i] - ah[i] * scale + b * r_prev[i] + c * r_prev[i].conj())
            .collect();
        let sigma2 = norm_sqr(&r) * inv_m;
        let back = a.adjoint_matvec(&r)?;
        let z: Vec<Complex<T>> = h.iter().zip(&back).map(|(hi, bi)| hi + bi * scale).collect();
        let threshold = lambda * sigma2.sqrt();
        let h_next: Vec<Complex<T>> = z.iter().map(|&zi| soft_threshold_complex(zi, threshold)).collect();
        let (b_next, c_next) = onsager_coeffs(&z, threshold, m);

        if !sigma2.is_finite() || h_next.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Divergence { iteration: t });
        }

        h = h_next;
        b = b_next;
        c = c_next;
        observe(&AmpState {
            iteration: t,
            h: h.clone(),
            z,
            r: r.clone(),
            sigma2,
            threshold,
            b,
            c,
        });
        r_prev = r;

        if let Some(eps) = cfg.tolerance {
            let ah = a.matvec(&h)?;
            let res: T = y.iter().zip(&ah).map(|(yi, ai)| (yi - ai * scale).norm_sqr()).sum();
            if res.as_f64() < eps {
                break;
            }
        }
    }
    Ok(h.into_iter().map(|v| v * scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    type C = Complex<f64>;

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold_complex(C::new(0.5, 0.0), 1.0), C::zero());
        let v = soft_threshold_complex(C::new(0.0, 3.0), 1.0);
        assert!((v - C::new(0.0, 2.0)).norm() < 1e-15);
        let v = soft_threshold_complex(C::new(1.0, 1.0), 1.0);
        let expected = (2f64.sqrt() - 1.0) / 2f64.sqrt();
        assert!((v - C::new(expected, expected)).norm() < 1e-15);
        assert!((v.re - 0.2929).abs() < 1e-4);
        assert_eq!(soft_threshold_complex(C::zero(), 0.0), C::zero());
    }

    #[test]
    fn onsager_dead_zone_and_closed_form() {
        let (b, c) = onsager_coeffs(&[C::new(0.3, 0.1), C::new(-0.2, 0.0)], 1.0, 4);
        assert_eq!((b, c), (C::zero(), C::zero()));
        let (b, c) = onsager_coeffs(&[C::new(2.0, 0.0)], 1.0, 1);
        assert!((b - C::new(0.75, 0.0)).norm() < 1e-15);
        assert!((c - C::new(0.25, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn zero_observation_is_a_fixed_point() {
        let a = CMatrix::from_fn(4, 6, |i, j| C::new((i + j) as f64 * 0.1, (i as f64 - j as f64) * 0.05));
        let h = amp(&[C::zero(); 4], &a, &AmpConfig::default()).unwrap();
        assert!(h.iter().all(|v| v.is_zero()));
    }

    #[test]
    fn identity_operator_single_iteration() {
        let n = 8;
        let a = CMatrix::<f64>::identity(n);
        let mut y = vec![C::new(0.05, -0.02); n];
        y[3] = C::new(4.0, 3.0);
        let cfg = AmpConfig {
            iterations: 1,
            ..Default::default()
        };
        let h = amp(&y, &a, &cfg).unwrap();
        let sigma = (norm_sqr(&y) / n as f64).sqrt();
        for (hi, yi) in h.iter().zip(&y) {
            let expected = soft_threshold_complex(*yi, 1.5 * sigma);
            assert!((hi - expected).norm() < 1e-14);
        }
        assert!(h[3].norm() > 0.0);
        assert!(h[0].is_zero());
    }

    #[test]
    fn rejects_bad_dimensions_and_config() {
        let a = CMatrix::<f64>::identity(3);
        assert!(amp(&[C::zero(); 2], &a, &AmpConfig::default()).is_err());
        let bad = AmpConfig {
            iterations: 0,
            ..Default::default()
        };
        assert!(amp(&[C::zero(); 3], &a, &bad).is_err());
    }
}
