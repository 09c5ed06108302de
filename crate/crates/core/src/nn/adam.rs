//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    /// Number of steps taken so far.
    pub t: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(num_params: usize) -> Self {
        Self {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            t: 0,
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
        }
    }

    /// One update of `params` given `grads`, both flattened in the same order.
    pub fn step(&mut self, params: &mut [&mut T], grads: &[T], lr: T) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "adam holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (T::one() - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (T::one() - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            **p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Same update applied to a contiguous parameter slice.
    pub fn step_slice(&mut self, params: &mut [T], grads: &[T], lr: T) -> Result<()> {
        let mut refs: Vec<&mut T> = params.iter_mut().collect();
        self.step(&mut refs, grads, lr)
    }
}
