//! Central finite-difference checks of every backward pass (f64).
//!
//! Each check builds a random fixture, projects the layer output onto a
//! random direction `r` so the loss is `Σ r ⊙ y`, and compares analytic and
//! numeric derivatives on randomly sampled coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::activation::{relu, relu_backward};
use super::batchnorm::{BatchNorm, BnMode};
use super::conv::Conv2d;
use super::loss::mse_loss;
use super::network::{Network, NetworkSpec};
use super::Tensor4;
use crate::error::Result;

const STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub layer: &'static str,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

/// `|a − n| / max(|a|, |n|)`, zero when both vanish.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_| rng.random_range(-1.0..1.0))
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

struct Tally {
    layer: &'static str,
    coordinates: usize,
    max_rel_error: f64,
}

impl Tally {
    fn new(layer: &'static str) -> Self {
        Self {
            layer,
            coordinates: 0,
            max_rel_error: 0.0,
        }
    }

    fn add(&mut self, analytic: f64, numeric: f64) {
        self.coordinates += 1;
        self.max_rel_error = self.max_rel_error.max(relative_error(analytic, numeric));
    }

    fn finish(self) -> GradCheck {
        GradCheck {
            layer: self.layer,
            coordinates: self.coordinates,
            max_rel_error: self.max_rel_error,
        }
    }
}

/// Central difference of `f` with respect to `*slot`.
fn central(slot: impl Fn(f64), f: impl Fn() -> f64, x0: f64) -> f64 {
    slot(x0 + STEP);
    let up = f();
    slot(x0 - STEP);
    let down = f();
    slot(x0);
    (up - down) / (2.0 * STEP)
}

/// Convolution gradients for weights, bias and input.
pub fn check_conv(seed: u64, samples: usize) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = Conv2d::<f64>::he_uniform(3, 4, true, &mut rng);
    for b in layer.bias.as_mut().unwrap() {
        *b = rng.random_range(-1.0..1.0);
    }
    let x = random_tensor(&mut rng, [2, 3, 5, 5]);
    let r = random_tensor(&mut rng, [2, 4, 5, 5]);
    let grads = layer.backward(&x, &r, true)?;
    let gx = grads.grad_x.unwrap();
    let gb = grads.grad_bias.unwrap();
    let mut tally = Tally::new("conv");

    let cell = std::cell::RefCell::new((layer, x));
    let loss = || {
        let s = cell.borrow();
        dot(&s.0.forward(&s.1).unwrap(), &r)
    };
    for _ in 0..samples {
        let i = rng.random_range(0..gx.len());
        let x0 = cell.borrow().1.as_slice()[i];
        let n = central(|v| cell.borrow_mut().1.as_mut_slice()[i] = v, loss, x0);
        tally.add(gx.as_slice()[i], n);

        let j = rng.random_range(0..grads.grad_weight.len());
        let w0 = cell.borrow().0.weight[j];
        let n = central(|v| cell.borrow_mut().0.weight[j] = v, loss, w0);
        tally.add(grads.grad_weight[j], n);
    }
    for (o, &g) in gb.iter().enumerate() {
        let b0 = cell.borrow().0.bias.as_ref().unwrap()[o];
        let n = central(|v| cell.borrow_mut().0.bias.as_mut().unwrap()[o] = v, loss, b0);
        tally.add(g, n);
    }
    Ok(tally.finish())
}

/// Batch-norm gradients through the batch statistics.
pub fn check_batchnorm(seed: u64, samples: usize) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bn = BatchNorm::<f64>::new(3);
    for c in 0..3 {
        bn.gamma[c] = rng.random_range(0.5..1.5);
        bn.beta[c] = rng.random_range(-0.5..0.5);
    }
    let x = random_tensor(&mut rng, [4, 3, 3, 3]);
    let r = random_tensor(&mut rng, [4, 3, 3, 3]);
    let (_, cache) = bn.clone().forward(&x, BnMode::BatchStats)?;
    let grads = bn.backward(&cache.unwrap(), &r)?;
    let mut tally = Tally::new("batchnorm");

    let cell = std::cell::RefCell::new((bn, x));
    let loss = || {
        let mut s = cell.borrow_mut();
        let x = s.1.clone();
        let (y, _) = s.0.forward(&x, BnMode::BatchStats).unwrap();
        dot(&y, &r)
    };
    for _ in 0..samples {
        let i = rng.random_range(0..grads.grad_x.len());
        let x0 = cell.borrow().1.as_slice()[i];
        let n = central(|v| cell.borrow_mut().1.as_mut_slice()[i] = v, loss, x0);
        tally.add(grads.grad_x.as_slice()[i], n);
    }
    for c in 0..3 {
        let g0 = cell.borrow().0.gamma[c];
        let n = central(|v| cell.borrow_mut().0.gamma[c] = v, loss, g0);
        tally.add(grads.grad_gamma[c], n);
        let b0 = cell.borrow().0.beta[c];
        let n = central(|v| cell.borrow_mut().0.beta[c] = v, loss, b0);
        tally.add(grads.grad_beta[c], n);
    }
    Ok(tally.finish())
}

/// ReLU gradient on inputs kept away from the kink.
pub fn check_relu(seed: u64, samples: usize) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor4::from_fn([2, 2, 4, 4], |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    });
    let r = random_tensor(&mut rng, x.dims());
    let g = relu_backward(&x, &r)?;
    let mut tally = Tally::new("relu");
    let cell = std::cell::RefCell::new(x);
    let loss = || dot(&relu(&cell.borrow()), &r);
    for _ in 0..samples {
        let i = rng.random_range(0..g.len());
        let x0 = cell.borrow().as_slice()[i];
        let n = central(|v| cell.borrow_mut().as_mut_slice()[i] = v, loss, x0);
        tally.add(g.as_slice()[i], n);
    }
    Ok(tally.finish())
}

/// MSE gradient with respect to the prediction.
pub fn check_mse(seed: u64, samples: usize) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pred = random_tensor(&mut rng, [3, 2, 4, 4]);
    let target = random_tensor(&mut rng, [3, 2, 4, 4]);
    let (_, g) = mse_loss(&pred, &target)?;
    let mut tally = Tally::new("mse");
    let cell = std::cell::RefCell::new(pred);
    let loss = || mse_loss(&cell.borrow(), &target).unwrap().0;
    for _ in 0..samples {
        let i = rng.random_range(0..g.len());
        let x0 = cell.borrow().as_slice()[i];
        let n = central(|v| cell.borrow_mut().as_mut_slice()[i] = v, loss, x0);
        tally.add(g.as_slice()[i], n);
    }
    Ok(tally.finish())
}

/// End-to-end gradient of the MSE loss over a small network's parameters.
pub fn check_network(seed: u64, samples: usize) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::<f64>::new(&NetworkSpec::uniform(2, 3, 2, 2), &mut rng)?;
    for bn in &mut net.bns {
        for c in 0..bn.channels() {
            bn.gamma[c] = rng.random_range(0.5..1.5);
            bn.beta[c] = rng.random_range(-0.5..0.5);
        }
    }
    let x = random_tensor(&mut rng, [3, 2, 4, 4]);
    let t = random_tensor(&mut rng, [3, 2, 4, 4]);
    let (y, cache) = net.clone().forward_train(&x)?;
    let (_, g) = mse_loss(&y, &t)?;
    let analytic = net.backward(&cache, &g)?.flatten();
    let mut tally = Tally::new("network");

    let cell = std::cell::RefCell::new(net);
    let loss = || {
        let y = cell.borrow().forward_batch_stats(&x).unwrap();
        mse_loss(&y, &t).unwrap().0
    };
    for _ in 0..samples {
        let i = rng.random_range(0..analytic.len());
        let p0 = *cell.borrow_mut().params_mut()[i];
        let n = central(|v| *cell.borrow_mut().params_mut()[i] = v, loss, p0);
        tally.add(analytic[i], n);
    }
    Ok(tally.finish())
}

/// All layer checks with `samples` coordinates each.
pub fn check_all(seed: u64, samples: usize) -> Result<Vec<GradCheck>> {
    Ok(vec![
        check_conv(seed, samples)?,
        check_batchnorm(seed + 1, samples)?,
        check_relu(seed + 2, samples)?,
        check_mse(seed + 3, samples)?,
        check_network(seed + 4, samples)?,
    ])
}
