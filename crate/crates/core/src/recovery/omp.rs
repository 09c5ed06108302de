use num_complex::Complex;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::linalg::{dot_conj, norm_sqr, CMatrix};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct OmpResult<T> {
    pub coefficients: Vec<Complex<T>>,
    /// Selected columns in selection order.
    pub support: Vec<usize>,
    /// `||r||` before the first iteration and after each one.
    pub residual_norms: Vec<T>,
}

/// Orthogonal matching pursuit with at most `sparsity` greedy selections.
///
/// Each step picks the column with the largest normalized correlation
/// `|a_j^H r| / ||a_j||` and re-fits the active set by least squares through
/// an incrementally built orthonormal basis. Stops early on a zero residual.
pub fn omp<T: Real>(y: &[Complex<T>], a: &CMatrix<T>, sparsity: usize) -> Result<OmpResult<T>> {
    let (m, n) = a.shape();
    if y.len() != m {
        return Err(Error::Dimension(format!("observation length {} vs {m} rows", y.len())));
    }
    if sparsity > m.min(n) {
        return Err(Error::InvalidConfig(format!(
            "sparsity {sparsity} exceeds min(rows, cols) = {}",
            m.min(n)
        )));
    }
    let at = a.transpose();
    let col_norms: Vec<T> = (0..n).map(|j| norm_sqr(at.row(j)).sqrt()).collect();
    let y_norm = norm_sqr(y).sqrt();

    let mut basis: Vec<Vec<Complex<T>>> = Vec::new();
    // r_factor[k] holds column k of the upper-triangular R (length k + 1)
    let mut r_factor: Vec<Vec<Complex<T>>> = Vec::new();
    let mut projections: Vec<Complex<T>> = Vec::new();
    let mut support = Vec::new();
    let mut residual = y.to_vec();
    let mut residual_norms = vec![y_norm];
    let tiny = T::epsilon() * T::lit(16.0);

    for _ in 0..sparsity {
        let res_norm = *residual_norms.last().expect("non-empty");
        if res_norm <= tiny * y_norm || res_norm == T::zero() {
            break;
        }
        let mut best: Option<(usize, T)> = None;
        for j in 0..n {
            if col_norms[j] == T::zero() || support.contains(&j) {
                continue;
            }
            let score = dot_conj(at.row(j), &residual).norm() / col_norms[j];
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((j, score));
            }
        }
        let Some((j, _)) = best else { break };

        let mut v = at.row(j).to_vec();
        let mut coeffs = vec![Complex::zero(); basis.len() + 1];
        for _ in 0..2 {
            for (q, coef) in basis.iter().zip(coeffs.iter_mut()) {
                let p = dot_conj(q, &v);
                *coef += p;
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= p * qi;
                }
            }
        }
        let v_norm = norm_sqr(&v).sqrt();
        if v_norm <= T::lit(1e-10) * col_norms[j] {
            return Err(Error::RankDeficient { column: j });
        }
        let q: Vec<Complex<T>> = v.iter().map(|vi| vi / v_norm).collect();
        coeffs[basis.len()] = Complex::new(v_norm, T::zero());

        let p = dot_conj(&q, &residual);
        for (ri, qi) in residual.iter_mut().zip(&q) {
            *ri -= p * qi;
        }
        projections.push(dot_conj(&q, y));
        basis.push(q);
        r_factor.push(coeffs);
        support.push(j);
        residual_norms.push(norm_sqr(&residual).sqrt());
    }

    // back-substitution R x = Q^H y
    let k = support.len();
    let mut x = vec![Complex::zero(); k];
    for i in (0..k).rev() {
        let mut s = projections[i];
        for l in i + 1..k {
            s -= r_factor[l][i] * x[l];
        }
        x[i] = s / r_factor[i][i];
    }
    let mut coefficients = vec![Complex::zero(); n];
    for (&j, xi) in support.iter().zip(x) {
        coefficients[j] = xi;
    }
    Ok(OmpResult {
        coefficients,
        support,
        residual_norms,
    })
}
