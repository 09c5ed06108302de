//! Per-channel batch normalization.

use super::Tensor4;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Which statistics a forward pass uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BnMode {
    /// Batch statistics, running statistics updated.
    Train,
    /// Running statistics.
    #[default]
    Eval,
    /// Batch statistics without touching the running statistics.
    BatchStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

/// Values saved by a batch-statistics forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub x_hat: Tensor4<T>,
    pub inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub grad_x: Tensor4<T>,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    /// γ=1, β=0, running mean 0 and variance 1.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::lit(BN_EPS),
            momentum: T::lit(BN_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::Dimension("batch norm parameter lengths differ".into()));
        }
        if !(self.eps > T::zero()) {
            return Err(Error::InvalidConfig("batch norm eps must be positive".into()));
        }
        if !(self.momentum > T::zero() && self.momentum < T::one()) {
            return Err(Error::InvalidConfig("batch norm momentum must lie in (0,1)".into()));
        }
        Ok(())
    }

    fn check(&self, x: &Tensor4<T>) -> Result<()> {
        if x.channels() != self.channels() {
            return Err(Error::Dimension(format!(
                "batch norm has {} channels, input has {}",
                self.channels(),
                x.channels()
            )));
        }
        Ok(())
    }

    /// Per-channel batch mean and biased variance, summed in index order.
    fn batch_stats(&self, x: &Tensor4<T>) -> (Vec<T>, Vec<T>, usize) {
        let [n, c, h, w] = x.dims();
        let hw = h * w;
        let count = n * hw;
        let inv = T::one() / T::lit(count as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for i in 0..n {
                s += x.item(i)[ch * hw..(ch + 1) * hw].iter().copied().sum::<T>();
            }
            let m = s * inv;
            let mut q = T::zero();
            for i in 0..n {
                for &v in &x.item(i)[ch * hw..(ch + 1) * hw] {
                    q += (v - m) * (v - m);
                }
            }
            mean[ch] = m;
            var[ch] = q * inv;
        }
        (mean, var, count)
    }

    /// Forward pass. A cache is returned for the batch-statistics modes.
    pub fn forward(&mut self, x: &Tensor4<T>, mode: BnMode) -> Result<(Tensor4<T>, Option<BnCache<T>>)> {
        self.check(x)?;
        let [n, c, h, w] = x.dims();
        let hw = h * w;
        match mode {
            BnMode::Eval => Ok((self.forward_eval(x)?, None)),
            BnMode::Train | BnMode::BatchStats => {
                let (mean, var, count) = self.batch_stats(x);
                if mode == BnMode::Train {
                    let unbias = if count > 1 {
                        T::lit(count as f64 / (count - 1) as f64)
                    } else {
                        T::one()
                    };
                    for ch in 0..c {
                        let m = self.momentum;
                        self.running_mean[ch] = (T::one() - m) * self.running_mean[ch] + m * mean[ch];
                        self.running_var[ch] = (T::one() - m) * self.running_var[ch] + m * var[ch] * unbias;
                    }
                }
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();
                let mut x_hat = Tensor4::zeros([n, c, h, w]);
                let mut y = Tensor4::zeros([n, c, h, w]);
                let xs = x.as_slice();
                for i in 0..n {
                    for ch in 0..c {
                        let off = (i * c + ch) * hw;
                        for p in off..off + hw {
                            let xh = (xs[p] - mean[ch]) * inv_std[ch];
                            x_hat.as_mut_slice()[p] = xh;
                            y.as_mut_slice()[p] = self.gamma[ch] * xh + self.beta[ch];
                        }
                    }
                }
                Ok((y, Some(BnCache { x_hat, inv_std })))
            }
        }
    }

    /// Running-statistics forward pass: `y = x * scale + shift`.
    pub fn forward_eval(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(x)?;
        let [n, c, h, w] = x.dims();
        let hw = h * w;
        let (scale, shift) = self.eval_affine();
        let mut y = x.clone();
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                for v in &mut y.as_mut_slice()[off..off + hw] {
                    *v = *v * scale[ch] + shift[ch];
                }
            }
        }
        Ok(y)
    }

    /// Per-channel `(scale, shift)` of the eval-mode affine map.
    pub fn eval_affine(&self) -> (Vec<T>, Vec<T>) {
        let scale: Vec<T> = self
            .gamma
            .iter()
            .zip(&self.running_var)
            .map(|(&g, &v)| g / (v + self.eps).sqrt())
            .collect();
        let shift = self
            .beta
            .iter()
            .zip(&self.running_mean)
            .zip(&scale)
            .map(|((&b, &m), &s)| b - m * s)
            .collect();
        (scale, shift)
    }

    /// Backward pass through batch statistics.
    pub fn backward(&self, cache: &BnCache<T>, grad_out: &Tensor4<T>) -> Result<BnGrads<T>> {
        let dims = cache.x_hat.dims();
        if grad_out.dims() != dims {
            return Err(Error::Dimension(format!(
                "batch norm grad_out dims {:?}, expected {:?}",
                grad_out.dims(),
                dims
            )));
        }
        let [n, c, h, w] = dims;
        let hw = h * w;
        let m = T::lit((n * hw) as f64);
        let (g, xh) = (grad_out.as_slice(), cache.x_hat.as_slice());
        let mut grad_gamma = vec![T::zero(); c];
        let mut grad_beta = vec![T::zero(); c];
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                for p in off..off + hw {
                    grad_beta[ch] += g[p];
                    grad_gamma[ch] += g[p] * xh[p];
                }
            }
        }
        let mut grad_x = Tensor4::zeros(dims);
        let gx = grad_x.as_mut_slice();
        for ch in 0..c {
            let k = self.gamma[ch] * cache.inv_std[ch] / m;
            for i in 0..n {
                let off = (i * c + ch) * hw;
                for p in off..off + hw {
                    gx[p] = k * (m * g[p] - grad_beta[ch] - xh[p] * grad_gamma[ch]);
                }
            }
        }
        Ok(BnGrads {
            grad_x,
            grad_gamma,
            grad_beta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_point_standardization() {
        let mut bn = BatchNorm::<f64>::new(1);
        bn.eps = 1e-300;
        let x = Tensor4::from_vec([2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        let (y, _) = bn.forward(&x, BnMode::Train).unwrap();
        assert!((y.as_slice()[0] + 1.0).abs() < 1e-12);
        assert!((y.as_slice()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bn = BatchNorm::<f64>::new(2);
        bn.gamma = vec![0.0, 0.0];
        bn.beta = vec![0.5, -2.0];
        let x = Tensor4::from_fn([3, 2, 2, 2], |_| rng.random_range(-5.0..5.0));
        for mode in [BnMode::Train, BnMode::Eval, BnMode::BatchStats] {
            let (y, _) = bn.forward(&x, mode).unwrap();
            for i in 0..3 {
                assert!(y.item(i)[..4].iter().all(|&v| v == 0.5));
                assert!(y.item(i)[4..].iter().all(|&v| v == -2.0));
            }
        }
    }

    #[test]
    fn output_moments_follow_gamma_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut bn = BatchNorm::<f64>::new(3);
        bn.gamma = vec![0.5, 2.0, -1.5];
        bn.beta = vec![1.0, -0.25, 0.0];
        let x = Tensor4::from_fn([8, 3, 4, 4], |[_, c, _, _]| {
            rng.random_range(-1.0..3.0) * (c + 1) as f64
        });
        let (y, _) = bn.forward(&x, BnMode::BatchStats).unwrap();
        let (mean, var, _) = bn.batch_stats(&y);
        for c in 0..3 {
            assert!((mean[c] - bn.beta[c]).abs() < 1e-4);
            // eps shrinks the variance slightly
            assert!((var[c] - bn.gamma[c] * bn.gamma[c]).abs() < 1e-4);
        }
    }

    #[test]
    fn running_stats_update() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = Tensor4::from_vec([2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        bn.forward(&x, BnMode::Train).unwrap();
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
        // unbiased variance of {1,3} is 2
        assert!((bn.running_var[0] - (0.9 + 0.2)).abs() < 1e-15);
        bn.forward(&x, BnMode::BatchStats).unwrap();
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn eval_uses_running_stats() {
        let mut bn = BatchNorm::<f64>::new(1);
        bn.running_mean = vec![1.0];
        bn.running_var = vec![4.0 - bn.eps];
        bn.gamma = vec![3.0];
        bn.beta = vec![0.5];
        let x = Tensor4::from_vec([1, 1, 1, 2], vec![1.0, 5.0]).unwrap();
        let (y, cache) = bn.forward(&x, BnMode::Eval).unwrap();
        assert!(cache.is_none());
        assert!((y.as_slice()[0] - 0.5).abs() < 1e-12);
        assert!((y.as_slice()[1] - 6.5).abs() < 1e-12);
    }

    #[test]
    fn zero_grad_and_beta_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bn = BatchNorm::<f64>::new(2);
        let x = Tensor4::from_fn([2, 2, 3, 3], |_| rng.random_range(-1.0..1.0));
        let (_, cache) = bn.forward(&x, BnMode::Train).unwrap();
        let cache = cache.unwrap();
        let zero = bn.backward(&cache, &Tensor4::zeros(x.dims())).unwrap();
        assert!(zero.grad_x.as_slice().iter().all(|&v| v == 0.0));
        assert!(zero.grad_gamma.iter().chain(&zero.grad_beta).all(|&v| v == 0.0));

        let g = Tensor4::from_fn(x.dims(), |_| rng.random_range(-1.0..1.0));
        let grads = bn.backward(&cache, &g).unwrap();
        for c in 0..2 {
            let s: f64 = (0..2).map(|i| g.item(i)[c * 9..(c + 1) * 9].iter().sum::<f64>()).sum();
            assert!((grads.grad_beta[c] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut bn = BatchNorm::<f32>::new(2);
        assert!(bn.forward(&Tensor4::zeros([1, 3, 1, 1]), BnMode::Eval).is_err());
    }
}
