//! Minibatch Adam training with an optional L1 penalty on BN scales.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::loss::{mse_loss, mse_value};
use super::network::Network;
use super::Tensor4;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Weight of `Σ|γ|` in the objective.
    pub lambda_reg: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            learning_rate: 1e-3,
            batch_size: 32,
            lambda_reg: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be non-negative",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda_reg {} must be non-negative",
                self.lambda_reg
            )));
        }
        Ok(())
    }
}

/// Paired network inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples<T> {
    pub inputs: Tensor4<T>,
    pub targets: Tensor4<T>,
}

impl<T: Real> Samples<T> {
    pub fn new(inputs: Tensor4<T>, targets: Tensor4<T>) -> Result<Self> {
        if inputs.batch() != targets.batch() || inputs.spatial() != targets.spatial() {
            return Err(Error::Dimension(format!(
                "inputs {:?} and targets {:?} do not pair up",
                inputs.dims(),
                targets.dims()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.gather(indices),
            targets: self.targets.gather(indices),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sample-weighted mean MSE over the epoch's minibatches.
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub initial_test_loss: Option<f64>,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn final_test_loss(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.test_loss).or(self.initial_test_loss)
    }
}

/// Eval-mode MSE over a whole set, evaluated in chunks of `batch_size`.
pub fn evaluate_loss<T: Real>(net: &Network<T>, data: &Samples<T>, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let part = data.subset(chunk);
        let pred = net.forward(&part.inputs)?;
        total += mse_value(&pred, &part.targets)?.as_f64() * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Trains in place. The same seed and inputs give the same trajectory.
pub fn train<T: Real>(
    net: &mut Network<T>,
    train_set: &Samples<T>,
    test_set: Option<&Samples<T>>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    train_observed(net, train_set, test_set, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_observed<T: Real>(
    net: &mut Network<T>,
    train_set: &Samples<T>,
    test_set: Option<&Samples<T>>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainLog> {
    cfg.validate()?;
    net.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let mut log = TrainLog {
        initial_test_loss: test_set.map(|t| evaluate_loss(net, t, cfg.batch_size)).transpose()?,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net.param_count());
    let lr = T::lit(cfg.learning_rate);
    let lambda = T::lit(cfg.lambda_reg);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.subset(chunk);
            let (pred, cache) = net.forward_train(&batch.inputs)?;
            let (loss, grad) = mse_loss(&pred, &batch.targets)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            total += loss * chunk.len() as f64;
            let mut grads = net.backward(&cache, &grad)?;
            if cfg.lambda_reg > 0.0 {
                for (gg, bn) in grads.gamma.iter_mut().zip(&net.bns) {
                    for (g, &gamma) in gg.iter_mut().zip(&bn.gamma) {
                        *g += lambda * sign(gamma);
                    }
                }
            }
            adam.step(&mut net.params_mut(), &grads.flatten(), lr)?;
        }
        let entry = EpochLog {
            epoch,
            train_loss: total / train_set.len() as f64,
            test_loss: test_set.map(|t| evaluate_loss(net, t, cfg.batch_size)).transpose()?,
        };
        on_epoch(&entry);
        log.epochs.push(entry);
    }
    Ok(log)
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
