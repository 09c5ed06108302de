//! Mean squared error over a batch.

use super::Tensor4;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `(1/N) Σ_i ‖pred_i − target_i‖²` with `N` the batch size, and its gradient.
pub fn mse_loss<T: Real>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<(T, Tensor4<T>)> {
    if pred.dims() != target.dims() {
        return Err(Error::Dimension(format!(
            "loss shapes differ: {:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let inv_n = T::one() / T::lit(pred.batch() as f64);
    let two = T::lit(2.0);
    let mut loss = T::zero();
    let grad = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d * d;
            two * d * inv_n
        })
        .collect();
    Ok((loss * inv_n, Tensor4::from_vec(pred.dims(), grad)?))
}

/// Loss value only.
pub fn mse_value<T: Real>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<T> {
    mse_loss(pred, target).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_inputs_zero_loss() {
        let x = Tensor4::from_vec([1, 1, 1, 3], vec![1.0f64, -2.0, 3.0]).unwrap();
        let (l, g) = mse_loss(&x, &x).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_residual() {
        let p = Tensor4::from_vec([1, 1, 2, 2], vec![1.0f64; 4]).unwrap();
        let t = Tensor4::zeros([1, 1, 2, 2]);
        let (l, g) = mse_loss(&p, &t).unwrap();
        assert_eq!(l, 4.0);
        assert!(g.as_slice().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn averages_over_batch() {
        let p = Tensor4::from_vec([2, 1, 1, 1], vec![1.0f64, 3.0]).unwrap();
        let t = Tensor4::zeros([2, 1, 1, 1]);
        assert_eq!(mse_value(&p, &t).unwrap(), 5.0);
    }

    #[test]
    fn shape_mismatch() {
        assert!(mse_loss(&Tensor4::<f32>::zeros([1, 1, 1, 2]), &Tensor4::zeros([1, 1, 2, 1])).is_err());
    }
}
