//! Rectified linear unit.

use super::Tensor4;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[inline]
fn relu_scalar<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

pub fn relu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(relu_scalar)
}

pub fn relu_in_place<T: Real>(x: &mut Tensor4<T>) {
    for v in x.as_mut_slice() {
        *v = relu_scalar(*v);
    }
}

/// Masks `grad_out` by `x > 0`; the subgradient at 0 is 0.
pub fn relu_backward<T: Real>(x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if x.dims() != grad_out.dims() {
        return Err(Error::Dimension(format!(
            "relu grad_out dims {:?}, expected {:?}",
            grad_out.dims(),
            x.dims()
        )));
    }
    let data = x
        .as_slice()
        .iter()
        .zip(grad_out.as_slice())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(x.dims(), data)
}
