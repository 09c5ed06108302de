use num_complex::Complex;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::scalar::Real;

/// Mean and covariance of the row-major vectorized channel.
#[derive(Debug, Clone)]
pub struct ChannelStats<T> {
    pub rows: usize,
    pub cols: usize,
    pub mean: Vec<Complex<T>>,
    pub covariance: CMatrix<T>,
}

impl<T: Real> ChannelStats<T> {
    pub fn new(rows: usize, cols: usize, mean: Vec<Complex<T>>, covariance: CMatrix<T>) -> Result<Self> {
        let n = rows * cols;
        if mean.len() != n || covariance.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "stats for a {rows}x{cols} channel need a length-{n} mean and {n}x{n} covariance"
            )));
        }
        Ok(Self {
            rows,
            cols,
            mean,
            covariance,
        })
    }

    /// Sample mean and (unbiased) sample covariance of a set of channels.
    pub fn from_samples(samples: &[CMatrix<T>]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Empty("no channel samples for LMMSE statistics".into()))?;
        let (rows, cols) = first.shape();
        let n = rows * cols;
        let count = T::lit(samples.len() as f64);
        let mut mean = vec![Complex::zero(); n];
        for s in samples {
            if s.shape() != (rows, cols) {
                return Err(Error::Dimension("channel samples differ in shape".into()));
            }
            for (m, v) in mean.iter_mut().zip(s.as_slice()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m = *m / count;
        }
        let mut cov = CMatrix::zeros(n, n);
        for s in samples {
            let d: Vec<Complex<T>> = s.as_slice().iter().zip(&mean).map(|(v, m)| v - m).collect();
            let data = cov.as_mut_slice();
            for i in 0..n {
                let di = d[i];
                for (o, dj) in data[i * n..(i + 1) * n].iter_mut().zip(&d) {
                    *o += di * dj.conj();
                }
            }
        }
        let denom = if samples.len() > 1 { count - T::one() } else { T::one() };
        Ok(Self {
            rows,
            cols,
            mean,
            covariance: cov.scale_real(T::one() / denom),
        })
    }
}

/// LMMSE estimator with the `Phi`-dependent products cached.
#[derive(Debug, Clone)]
pub struct Lmmse<T> {
    phi: CMatrix<T>,
    stats: ChannelStats<T>,
    /// `C Phi^H`
    c_phi_h: CMatrix<T>,
    /// `Phi C Phi^H`
    gram: CMatrix<T>,
    phi_mean: Vec<Complex<T>>,
}

impl<T: Real> Lmmse<T> {
    pub fn new(phi: CMatrix<T>, stats: ChannelStats<T>) -> Result<Self> {
        if phi.cols() != stats.mean.len() {
            return Err(Error::Dimension(format!(
                "measurement matrix has {} columns, channel has {} entries",
                phi.cols(),
                stats.mean.len()
            )));
        }
        let c_phi_h = stats.covariance.matmul(&phi.adjoint())?;
        let gram = phi.matmul(&c_phi_h)?;
        let phi_mean = phi.matvec(&stats.mean)?;
        Ok(Self {
            phi,
            stats,
            c_phi_h,
            gram,
            phi_mean,
        })
    }

    pub fn phi(&self) -> &CMatrix<T> {
        &self.phi
    }

    /// `mean + C Phi^H (Phi C Phi^H + sigma^2 I)^{-1} (y - Phi mean)`
    pub fn estimate(&self, y: &[Complex<T>], noise_var: T) -> Result<CMatrix<T>> {
        let m = self.phi.rows();
        if y.len() != m {
            return Err(Error::Dimension(format!("observation length {} vs {m}", y.len())));
        }
        let mut inner = self.gram.clone();
        for i in 0..m {
            inner[(i, i)] += Complex::new(noise_var, T::zero());
        }
        let innovation = CMatrix::column_vector(y.iter().zip(&self.phi_mean).map(|(a, b)| a - b).collect());
        let est = if self.stats.covariance.frobenius_norm_sqr() == T::zero() {
            self.stats.mean.clone()
        } else {
            let u = inner
                .solve(&innovation, T::lit(1e-13))
                .map_err(|e| match noise_var == T::zero() {
                    true => Error::Singular(format!("noiseless LMMSE needs regularization ({e})")),
                    false => e,
                })?;
            let gain = self.c_phi_h.matvec(u.as_slice())?;
            self.stats.mean.iter().zip(gain).map(|(a, b)| a + b).collect()
        };
        CMatrix::unvec_row(&est, self.stats.rows, self.stats.cols)
    }
}

/// One-shot LMMSE estimate.
pub fn lmmse<T: Real>(y: &[Complex<T>], phi: &CMatrix<T>, stats: &ChannelStats<T>, noise_var: T) -> Result<CMatrix<T>> {
    Lmmse::new(phi.clone(), stats.clone())?.estimate(y, noise_var)
}

#[cfg(test)]
mod tests {
    use super::*;

    type C = Complex<f64>;

    #[test]
    fn degenerate_prior_returns_mean() {
        let mean: Vec<C> = (0..4).map(|i| C::new(i as f64, -1.0)).collect();
        let stats = ChannelStats::new(2, 2, mean.clone(), CMatrix::zeros(4, 4)).unwrap();
        let phi = CMatrix::from_fn(3, 4, |i, j| C::new((i + j) as f64, 0.5));
        let est = lmmse(&[C::new(9.0, 9.0); 3], &phi, &stats, 0.1).unwrap();
        assert_eq!(est.as_slice(), mean.as_slice());
    }

    #[test]
    fn scalar_wiener_filter() {
        let stats = ChannelStats::new(2, 2, vec![C::zero(); 4], CMatrix::identity(4)).unwrap();
        let y = vec![C::new(1.0, 2.0), C::new(-0.5, 0.0), C::new(0.0, 3.0), C::new(2.0, -2.0)];
        let sigma2 = 0.25;
        let est = lmmse(&y, &CMatrix::identity(4), &stats, sigma2).unwrap();
        for (e, yi) in est.as_slice().iter().zip(&y) {
            assert!((e - yi / (1.0 + sigma2)).norm() < 1e-14);
        }
    }

    #[test]
    fn huge_noise_returns_mean() {
        let mean = vec![C::new(0.3, 0.1); 4];
        let stats = ChannelStats::new(2, 2, mean.clone(), CMatrix::identity(4)).unwrap();
        let y = vec![C::new(5.0, -5.0); 4];
        let est = lmmse(&y, &CMatrix::identity(4), &stats, 1e6).unwrap();
        for (e, m) in est.as_slice().iter().zip(&mean) {
            assert!((e - m).norm() < 1e-3);
        }
    }

    #[test]
    fn noiseless_rank_deficient_is_singular() {
        let stats = ChannelStats::new(1, 2, vec![C::zero(); 2], CMatrix::identity(2)).unwrap();
        // two identical rows make Phi C Phi^H singular
        let phi = CMatrix::from_fn(2, 2, |_, j| C::new(j as f64 + 1.0, 0.0));
        let err = lmmse(&[C::new(1.0, 0.0); 2], &phi, &stats, 0.0).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
    }

    #[test]
    fn sample_statistics() {
        let a = CMatrix::from_vec(1, 2, vec![C::new(1.0, 0.0), C::new(0.0, 0.0)]).unwrap();
        let b = CMatrix::from_vec(1, 2, vec![C::new(3.0, 0.0), C::new(0.0, 2.0)]).unwrap();
        let s = ChannelStats::from_samples(&[a, b]).unwrap();
        assert_eq!(s.mean, vec![C::new(2.0, 0.0), C::new(0.0, 1.0)]);
        // deviations: (-1, -j) and (1, j); unbiased covariance with n - 1 = 1
        assert_eq!(s.covariance[(0, 0)], C::new(2.0, 0.0));
        assert_eq!(s.covariance[(0, 1)], C::new(0.0, -2.0));
    }
}
