//! Coarse channel estimators mapping compressed observations to a channel
//! matrix: complex AMP, OMP and a sample-statistics LMMSE baseline.

mod amp;
mod lmmse;
mod omp;

pub use amp::{amp, amp_traced, onsager_coeffs, soft_threshold_complex, AmpConfig, AmpState};
pub use lmmse::{lmmse, ChannelStats, Lmmse};
pub use omp::{omp, OmpResult};

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::scalar::Real;

/// How a coefficient vector over the grid becomes an `N_r x N_t` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ReshapeMode {
    /// `unvec(Psi h)`; valid for any grid size.
    #[default]
    Project,
    /// Literal reshape of `h` (only when `G_r G_t = N_r N_t`).
    Reshape,
}

#[derive(Debug, Clone)]
pub struct SparseEstimate<T> {
    pub h_hat: Vec<Complex<T>>,
    pub h_matrix: CMatrix<T>,
}

impl<T: Real> SparseEstimate<T> {
    pub fn new(h_hat: Vec<Complex<T>>, psi: &CMatrix<T>, n_r: usize, n_t: usize, mode: ReshapeMode) -> Result<Self> {
        let h_matrix = estimate_channel_matrix(&h_hat, psi, n_r, n_t, mode)?;
        Ok(Self { h_hat, h_matrix })
    }
}

/// Maps grid coefficients to the channel matrix.
pub fn estimate_channel_matrix<T: Real>(
    h: &[Complex<T>],
    psi: &CMatrix<T>,
    n_r: usize,
    n_t: usize,
    mode: ReshapeMode,
) -> Result<CMatrix<T>> {
    match mode {
        ReshapeMode::Project => {
            if psi.rows() != n_r * n_t {
                return Err(Error::Dimension(format!(
                    "dictionary has {} rows, channel is {n_r}x{n_t}",
                    psi.rows()
                )));
            }
            CMatrix::unvec_row(&psi.matvec(h)?, n_r, n_t)
        }
        ReshapeMode::Reshape => {
            if h.len() != n_r * n_t {
                return Err(Error::Dimension(format!(
                    "cannot reshape {} coefficients into {n_r}x{n_t}",
                    h.len()
                )));
            }
            CMatrix::unvec_row(h, n_r, n_t)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{dictionary, ArrayGeometry, GridSpec};
    use num_traits::Zero;

    #[test]
    fn single_atom_synthesis_is_rank_one() {
        let rx = ArrayGeometry::new(2, 2).unwrap();
        let tx = ArrayGeometry::new(4, 1).unwrap();
        let grid = GridSpec::critical(rx, tx);
        let d = dictionary::<f64>(rx, tx, grid).unwrap();
        let (i, j) = (3, 1);
        let coeff = Complex::new(0.5, -2.0);
        let mut h = vec![Complex::zero(); 16];
        h[i * grid.g_t() + j] = coeff;
        let m = estimate_channel_matrix(&h, &d.psi, 4, 4, ReshapeMode::Project).unwrap();
        let expected = CMatrix::from_fn(4, 4, |r, c| coeff * d.a_r[(r, i)] * d.a_t[(c, j)].conj());
        assert!(m.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn zero_coefficients_give_zero_matrix() {
        let rx = ArrayGeometry::new(2, 1).unwrap();
        let d = dictionary::<f64>(rx, rx, GridSpec::critical(rx, rx)).unwrap();
        let m = estimate_channel_matrix(&[Complex::zero(); 4], &d.psi, 2, 2, ReshapeMode::Project).unwrap();
        assert_eq!(m.frobenius_norm(), 0.0);
    }

    #[test]
    fn reshape_mode_requires_critical_size() {
        let rx = ArrayGeometry::new(2, 1).unwrap();
        let d = dictionary::<f64>(
            rx,
            rx,
            GridSpec {
                g_rx: 3,
                g_rz: 1,
                g_tx: 2,
                g_tz: 1,
            },
        )
        .unwrap();
        let h = vec![Complex::zero(); 6];
        assert!(estimate_channel_matrix(&h, &d.psi, 2, 2, ReshapeMode::Reshape).is_err());
        assert!(estimate_channel_matrix(&h, &d.psi, 2, 2, ReshapeMode::Project).is_ok());
    }
}
