//! The refiner: `[conv → BN → ReLU] × hidden` followed by a plain output conv.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::{relu_backward, relu_in_place};
use super::batchnorm::{BatchNorm, BnCache, BnMode};
use super::conv::Conv2d;
use super::Tensor4;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Channel counts of every layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub in_channels: usize,
    pub hidden: Vec<usize>,
    pub out_channels: usize,
    #[serde(default)]
    pub conv_bias: bool,
}

impl NetworkSpec {
    pub const DCNN_DEPTH: usize = 11;
    pub const DCNN_WIDTH: usize = 64;

    /// 2 → 64 × 11 → 2, no conv biases.
    pub fn dcnn() -> Self {
        Self::uniform(2, Self::DCNN_WIDTH, Self::DCNN_DEPTH, 2)
    }

    pub fn uniform(in_channels: usize, width: usize, depth: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            hidden: vec![width; depth],
            out_channels,
            conv_bias: false,
        }
    }

    pub fn num_convs(&self) -> usize {
        self.hidden.len() + 1
    }

    /// `(in, out)` for each conv layer.
    pub fn conv_shapes(&self) -> Vec<(usize, usize)> {
        let mut chans = vec![self.in_channels];
        chans.extend(&self.hidden);
        chans.push(self.out_channels);
        chans.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig(
                "network input/output channels must be positive".into(),
            ));
        }
        if let Some(i) = self.hidden.iter().position(|&c| c == 0) {
            return Err(Error::LayerEmptied { layer: i });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    /// `hidden.len() + 1` convolutions; the last one is the output layer.
    pub convs: Vec<Conv2d<T>>,
    /// One batch norm per hidden conv.
    pub bns: Vec<BatchNorm<T>>,
}

/// Activations saved by [`Network::forward_train`].
#[derive(Debug, Clone)]
pub struct TrainCache<T> {
    /// Input of every conv layer; entries after the first are post-ReLU.
    acts: Vec<Tensor4<T>>,
    bn: Vec<BnCache<T>>,
}

/// Gradients laid out like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrads<T> {
    pub conv_weight: Vec<Vec<T>>,
    pub conv_bias: Vec<Option<Vec<T>>>,
    pub gamma: Vec<Vec<T>>,
    pub beta: Vec<Vec<T>>,
}

impl<T: Real> NetworkGrads<T> {
    /// Flattened in [`Network::params_mut`] order.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for i in 0..self.conv_weight.len() {
            out.extend_from_slice(&self.conv_weight[i]);
            if let Some(b) = &self.conv_bias[i] {
                out.extend_from_slice(b);
            }
            if i < self.gamma.len() {
                out.extend_from_slice(&self.gamma[i]);
                out.extend_from_slice(&self.beta[i]);
            }
        }
        out
    }
}

impl<T: Real> Network<T> {
    /// He-uniform conv weights, γ=1, β=0.
    pub fn new<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let convs = spec
            .conv_shapes()
            .into_iter()
            .map(|(ci, co)| Conv2d::he_uniform(ci, co, spec.conv_bias, rng))
            .collect();
        Ok(Self {
            convs,
            bns: spec.hidden.iter().map(|&c| BatchNorm::new(c)).collect(),
        })
    }

    /// All weights zero, γ=1, β=0.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            convs: spec
                .conv_shapes()
                .into_iter()
                .map(|(ci, co)| Conv2d::zeros(ci, co, spec.conv_bias))
                .collect(),
            bns: spec.hidden.iter().map(|&c| BatchNorm::new(c)).collect(),
        })
    }

    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec {
            in_channels: self.convs[0].in_channels,
            hidden: self.bns.iter().map(BatchNorm::channels).collect(),
            out_channels: self.convs[self.convs.len() - 1].out_channels,
            conv_bias: self.convs[0].bias.is_some(),
        }
    }

    /// Checks that layer channel counts chain together.
    pub fn validate(&self) -> Result<()> {
        if self.convs.len() != self.bns.len() + 1 {
            return Err(Error::Dimension(format!(
                "{} convs need {} batch norms, found {}",
                self.convs.len(),
                self.convs.len().saturating_sub(1),
                self.bns.len()
            )));
        }
        for (i, bn) in self.bns.iter().enumerate() {
            bn.validate()?;
            if bn.channels() == 0 {
                return Err(Error::LayerEmptied { layer: i });
            }
            if self.convs[i].out_channels != bn.channels() || self.convs[i + 1].in_channels != bn.channels() {
                return Err(Error::Dimension(format!("layer {i} channel counts do not chain")));
            }
        }
        for c in &self.convs {
            if c.weight.len() != c.in_channels * c.out_channels * 9 {
                return Err(Error::Dimension("conv weight length mismatch".into()));
            }
        }
        Ok(())
    }

    pub fn num_hidden(&self) -> usize {
        self.bns.len()
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv2d::param_count).sum::<usize>()
            + self.bns.iter().map(|b| 2 * b.channels()).sum::<usize>()
    }

    /// Running-statistics inference.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.forward_inner(x, false)
    }

    /// Inference normalizing each batch by its own statistics.
    pub fn forward_batch_stats(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.forward_inner(x, true)
    }

    /// Dispatches on a [`BnMode`]; `Train` updates running statistics.
    pub fn forward_mode(&mut self, x: &Tensor4<T>, mode: BnMode) -> Result<Tensor4<T>> {
        match mode {
            BnMode::Eval => self.forward(x),
            BnMode::BatchStats => self.forward_batch_stats(x),
            BnMode::Train => self.forward_train(x).map(|(y, _)| y),
        }
    }

    fn forward_inner(&self, x: &Tensor4<T>, batch_stats: bool) -> Result<Tensor4<T>> {
        let mut a = x.clone();
        for (conv, bn) in self.convs.iter().zip(&self.bns) {
            let z = conv.forward(&a)?;
            a = if batch_stats {
                bn.clone().forward(&z, BnMode::BatchStats)?.0
            } else {
                bn.forward_eval(&z)?
            };
            relu_in_place(&mut a);
        }
        self.convs[self.convs.len() - 1].forward(&a)
    }

    /// Batch-statistics forward pass that updates running statistics and
    /// keeps what the backward pass needs.
    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<(Tensor4<T>, TrainCache<T>)> {
        let mut acts = Vec::with_capacity(self.convs.len());
        let mut caches = Vec::with_capacity(self.bns.len());
        let mut a = x.clone();
        for (conv, bn) in self.convs.iter().zip(self.bns.iter_mut()) {
            let z = conv.forward(&a)?;
            let (mut y, cache) = bn.forward(&z, BnMode::Train)?;
            relu_in_place(&mut y);
            acts.push(std::mem::replace(&mut a, y));
            caches.push(cache.expect("train mode yields a cache"));
        }
        let out = self.convs[self.convs.len() - 1].forward(&a)?;
        acts.push(a);
        Ok((out, TrainCache { acts, bn: caches }))
    }

    pub fn backward(&self, cache: &TrainCache<T>, grad_out: &Tensor4<T>) -> Result<NetworkGrads<T>> {
        let n_conv = self.convs.len();
        let mut conv_weight = vec![Vec::new(); n_conv];
        let mut conv_bias = vec![None; n_conv];
        let mut gamma = vec![Vec::new(); self.bns.len()];
        let mut beta = vec![Vec::new(); self.bns.len()];

        let last = self.convs[n_conv - 1].backward(&cache.acts[n_conv - 1], grad_out, n_conv > 1)?;
        conv_weight[n_conv - 1] = last.grad_weight;
        conv_bias[n_conv - 1] = last.grad_bias;
        let mut g = last.grad_x;
        for i in (0..self.bns.len()).rev() {
            let upstream = g.take().expect("hidden layers request input gradients");
            let g_pre = relu_backward(&cache.acts[i + 1], &upstream)?;
            let bn = self.bns[i].backward(&cache.bn[i], &g_pre)?;
            gamma[i] = bn.grad_gamma;
            beta[i] = bn.grad_beta;
            let cg = self.convs[i].backward(&cache.acts[i], &bn.grad_x, i > 0)?;
            conv_weight[i] = cg.grad_weight;
            conv_bias[i] = cg.grad_bias;
            g = cg.grad_x;
        }
        Ok(NetworkGrads {
            conv_weight,
            conv_bias,
            gamma,
            beta,
        })
    }

    /// Every trainable parameter, in a fixed order: for each layer its conv
    /// weights, conv bias, then γ and β.
    pub fn params_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::with_capacity(self.param_count());
        let mut bns = self.bns.iter_mut();
        for conv in &mut self.convs {
            out.extend(conv.weight.iter_mut());
            if let Some(b) = &mut conv.bias {
                out.extend(b.iter_mut());
            }
            if let Some(bn) = bns.next() {
                out.extend(bn.gamma.iter_mut());
                out.extend(bn.beta.iter_mut());
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let conv_vec = |v: &[T]| v.iter().map(|&x| U::lit(x.as_f64())).collect::<Vec<U>>();
        Network {
            convs: self
                .convs
                .iter()
                .map(|c| Conv2d {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    weight: conv_vec(&c.weight),
                    bias: c.bias.as_deref().map(conv_vec),
                })
                .collect(),
            bns: self
                .bns
                .iter()
                .map(|b| BatchNorm {
                    gamma: conv_vec(&b.gamma),
                    beta: conv_vec(&b.beta),
                    running_mean: conv_vec(&b.running_mean),
                    running_var: conv_vec(&b.running_var),
                    eps: U::lit(b.eps.as_f64()),
                    momentum: U::lit(b.momentum.as_f64()),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dcnn_layout() {
        let spec = NetworkSpec::dcnn();
        assert_eq!(spec.num_convs(), 12);
        let net = Network::<f32>::zeros(&spec).unwrap();
        assert_eq!(net.bns.len(), 11);
        assert_eq!(net.param_count(), 372_352);
        assert_eq!(net.spec(), spec);
    }

    #[test]
    fn zero_weights_zero_output() {
        let net = Network::<f32>::zeros(&NetworkSpec::uniform(2, 8, 3, 2)).unwrap();
        let x = Tensor4::from_fn([2, 2, 4, 5], |[a, b, c, d]| (a + b + c + d) as f32 - 3.0);
        let y = net.forward(&x).unwrap();
        assert_eq!(y.dims(), [2, 2, 4, 5]);
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mmwave_shape_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::<f32>::new(&NetworkSpec::dcnn(), &mut rng).unwrap();
        let x = Tensor4::from_fn([1, 2, 16, 64], |_| rng.random_range(-1.0..1.0));
        assert_eq!(net.forward(&x).unwrap().dims(), [1, 2, 16, 64]);
    }

    #[test]
    fn params_and_grads_align() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Network::<f64>::new(&NetworkSpec::uniform(2, 3, 2, 2), &mut rng).unwrap();
        let x = Tensor4::from_fn([2, 2, 3, 3], |_| rng.random_range(-1.0..1.0));
        let (y, cache) = net.forward_train(&x).unwrap();
        let grads = net.backward(&cache, &y).unwrap();
        assert_eq!(grads.flatten().len(), net.param_count());
        assert_eq!(net.params_mut().len(), net.param_count());
    }

    #[test]
    fn channel_mismatch() {
        let net = Network::<f32>::zeros(&NetworkSpec::dcnn()).unwrap();
        assert!(net.forward(&Tensor4::zeros([1, 3, 4, 4])).is_err());
    }
}
