//! Dense complex matrices for the channel algebra.
//!
//! Storage is row-major. `vec{X}` throughout the crate means row-major
//! vectorization, i.e. the backing slice of the matrix; see
//! [`CMatrix::vec_col`] for the column-stacking form.

use std::ops::{Index, IndexMut};

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Wraps row-major data.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// A single column as an `n x 1` matrix.
    pub fn column_vector(data: Vec<Complex<T>>) -> Self {
        Self {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex<T>> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[Complex<T>] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<Complex<T>> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Row-major vectorization.
    pub fn vec_row(&self) -> Vec<Complex<T>> {
        self.data.clone()
    }

    /// Column-stacking vectorization.
    pub fn vec_col(&self) -> Vec<Complex<T>> {
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.push(self[(i, j)]);
            }
        }
        out
    }

    /// Inverse of [`CMatrix::vec_row`].
    pub fn unvec_row(v: &[Complex<T>], rows: usize, cols: usize) -> Result<Self> {
        Self::from_vec(rows, cols, v.to_vec())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn scale(&self, s: Complex<T>) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: T) -> Self {
        self.scale(Complex::new(s, T::zero()))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: Complex<T>, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(())
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "matmul {:?} x {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a.is_zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        if self.cols != x.len() {
            return Err(Error::Dimension(format!("matvec {:?} x {}", self.shape(), x.len())));
        }
        Ok((0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(x)
                    .fold(Complex::zero(), |acc, (a, b)| acc + a * b)
            })
            .collect())
    }

    /// `self^H x` without forming the adjoint.
    pub fn adjoint_matvec(&self, x: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        if self.rows != x.len() {
            return Err(Error::Dimension(format!(
                "adjoint matvec {:?} x {}",
                self.shape(),
                x.len()
            )));
        }
        let mut out = vec![Complex::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi.is_zero() {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a.conj() * xi;
            }
        }
        Ok(out)
    }

    pub fn kron(&self, rhs: &Self) -> Self {
        let (p, q) = rhs.shape();
        Self::from_fn(self.rows * p, self.cols * q, |i, j| {
            self[(i / p, j / q)] * rhs[(i % p, j % q)]
        })
    }

    /// Stacks matrices with equal column counts top to bottom.
    pub fn vstack(blocks: &[Self]) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::Empty("vstack of zero blocks".into()))?;
        let cols = first.cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for b in blocks {
            if b.cols != cols {
                return Err(Error::Dimension(format!(
                    "vstack column counts {} and {}",
                    cols, b.cols
                )));
            }
            rows += b.rows;
            data.extend_from_slice(&b.data);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn frobenius_norm_sqr(&self) -> T {
        norm_sqr(&self.data)
    }

    pub fn frobenius_norm(&self) -> T {
        self.frobenius_norm_sqr().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(T::zero(), T::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Solves `self * X = B` by LU factorization with partial pivoting.
    ///
    /// A pivot whose modulus falls below `tol` times the largest entry of the
    /// matrix is reported as singular.
    pub fn solve(&self, b: &Self, tol: T) -> Result<Self> {
        let n = self.rows;
        if self.cols != n || b.rows != n {
            return Err(Error::Dimension(format!(
                "solve {:?} with rhs {:?}",
                self.shape(),
                b.shape()
            )));
        }
        let scale = self.data.iter().map(|z| z.norm()).fold(T::zero(), T::max);
        if scale == T::zero() {
            return Err(Error::Singular("zero matrix".into()));
        }
        let mut a = self.clone();
        let mut x = b.clone();
        let m = b.cols;
        for k in 0..n {
            let (piv, piv_abs) = (k..n)
                .map(|i| (i, a[(i, k)].norm()))
                .fold(
                    (k, T::neg_infinity()),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            if piv_abs <= tol * scale {
                return Err(Error::Singular(format!("pivot {k} is {piv_abs}")));
            }
            if piv != k {
                for j in 0..n {
                    a.data.swap(k * n + j, piv * n + j);
                }
                for j in 0..m {
                    x.data.swap(k * m + j, piv * m + j);
                }
            }
            let d = a[(k, k)];
            for i in k + 1..n {
                let f = a[(i, k)] / d;
                if f.is_zero() {
                    continue;
                }
                for j in k..n {
                    let v = a[(k, j)];
                    a[(i, j)] -= f * v;
                }
                for j in 0..m {
                    let v = x[(k, j)];
                    x[(i, j)] -= f * v;
                }
            }
        }
        for k in (0..n).rev() {
            let d = a[(k, k)];
            for j in 0..m {
                let mut s = x[(k, j)];
                for i in k + 1..n {
                    s -= a[(k, i)] * x[(i, j)];
                }
                x[(k, j)] = s / d;
            }
        }
        Ok(x)
    }
}

impl<T> Index<(usize, usize)> for CMatrix<T> {
    type Output = Complex<T>;

    fn index(&self, (i, j): (usize, usize)) -> &Complex<T> {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for CMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[i * self.cols + j]
    }
}

pub fn norm_sqr<T: Real>(v: &[Complex<T>]) -> T {
    v.iter().map(|z| z.norm_sqr()).sum()
}

pub fn dot_conj<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    a.iter().zip(b).fold(Complex::zero(), |acc, (x, y)| acc + x.conj() * y)
}

#[cfg(test)]
mod tests {
    use super::*;

    type C = Complex<f64>;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    #[test]
    fn kron_shape_and_entries() {
        let a = CMatrix::from_vec(2, 1, vec![c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
        let b = CMatrix::from_vec(1, 2, vec![c(2.0, 0.0), c(3.0, 0.0)]).unwrap();
        let k = a.kron(&b);
        assert_eq!(k.shape(), (2, 2));
        assert_eq!(k[(1, 1)], c(0.0, 3.0));
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = CMatrix::from_vec(
            3,
            3,
            vec![
                c(0.0, 0.0),
                c(2.0, 1.0),
                c(1.0, 0.0),
                c(1.0, -1.0),
                c(0.0, 0.0),
                c(3.0, 0.0),
                c(4.0, 0.0),
                c(1.0, 0.0),
                c(0.0, 2.0),
            ],
        )
        .unwrap();
        let x = CMatrix::column_vector(vec![c(1.0, 2.0), c(-1.0, 0.5), c(0.0, -3.0)]);
        let b = a.matmul(&x).unwrap();
        let solved = a.solve(&b, 1e-14).unwrap();
        assert!(solved.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn solve_rejects_singular() {
        let a = CMatrix::<f64>::from_fn(2, 2, |_, _| c(1.0, 0.0));
        let b = CMatrix::column_vector(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(a.solve(&b, 1e-12), Err(Error::Singular(_))));
    }

    #[test]
    fn adjoint_matvec_matches_explicit_adjoint() {
        let a = CMatrix::from_fn(3, 2, |i, j| c(i as f64 + 0.5, j as f64 - i as f64));
        let x = vec![c(1.0, 1.0), c(0.0, -2.0), c(0.5, 0.0)];
        let lhs = a.adjoint_matvec(&x).unwrap();
        let rhs = a.adjoint().matvec(&x).unwrap();
        for (l, r) in lhs.iter().zip(&rhs) {
            assert!((l - r).norm() < 1e-14);
        }
    }

    #[test]
    fn vec_conventions() {
        let a = CMatrix::from_fn(2, 3, |i, j| c((3 * i + j) as f64, 0.0));
        assert_eq!(a.vec_row()[1], c(1.0, 0.0));
        assert_eq!(a.vec_col()[1], c(3.0, 0.0));
    }
}
