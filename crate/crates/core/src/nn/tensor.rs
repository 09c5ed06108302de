use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense rank-4 tensor with logical dims `(batch, channels, height, width)`,
/// stored contiguously in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![T::zero(); dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Dimension(format!("tensor dims {dims:?} must all be positive")));
        }
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Dimension(format!(
                "{} values for tensor dims {dims:?}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for n in 0..dims[0] {
            for c in 0..dims[1] {
                for h in 0..dims[2] {
                    for w in 0..dims[3] {
                        data.push(f([n, c, h, w]));
                    }
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    /// `(height, width)`
    pub fn spatial(&self) -> (usize, usize) {
        (self.dims[2], self.dims[3])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Elements of one batch item.
    pub fn item_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn item(&self, n: usize) -> &[T] {
        let l = self.item_len();
        &self.data[n * l..(n + 1) * l]
    }

    /// Copies the listed batch items into a new tensor, in the given order.
    pub fn gather(&self, indices: &[usize]) -> Self {
        let l = self.item_len();
        let mut data = Vec::with_capacity(indices.len() * l);
        for &i in indices {
            data.extend_from_slice(self.item(i));
        }
        Self {
            dims: [indices.len(), self.dims[1], self.dims[2], self.dims[3]],
            data,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum_sqr(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    fn offset(&self, [n, c, h, w]: [usize; 4]) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }
}

impl<T: Real> Index<[usize; 4]> for Tensor4<T> {
    type Output = T;

    fn index(&self, idx: [usize; 4]) -> &T {
        &self.data[self.offset(idx)]
    }
}

impl<T: Real> IndexMut<[usize; 4]> for Tensor4<T> {
    fn index_mut(&mut self, idx: [usize; 4]) -> &mut T {
        let o = self.offset(idx);
        &mut self.data[o]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_nchw() {
        let t = Tensor4::<f64>::from_fn([2, 3, 4, 5], |[n, c, h, w]| (n * 1000 + c * 100 + h * 10 + w) as f64);
        assert_eq!(t[[1, 2, 3, 4]], 1234.0);
        assert_eq!(t.as_slice()[1], 1.0);
        assert_eq!(t.item(1)[0], 1000.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor4::<f32>::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor4::<f32>::from_vec([0, 1, 2, 2], vec![]).is_err());
    }

    #[test]
    fn gather_reorders_items() {
        let t = Tensor4::<f32>::from_fn([3, 1, 1, 2], |[n, _, _, w]| (n * 10 + w) as f32);
        let g = t.gather(&[2, 0]);
        assert_eq!(g.as_slice(), &[20.0, 21.0, 0.0, 1.0]);
    }
}
