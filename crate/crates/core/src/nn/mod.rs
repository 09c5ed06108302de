//! Minimal CNN engine: NCHW tensors, 3x3 convolution, batch norm, ReLU,
//! MSE loss and Adam.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod gradcheck;
pub mod loss;
pub mod network;
pub mod tensor;
pub mod train;

use std::sync::atomic::{AtomicBool, Ordering};

pub use activation::{relu, relu_backward};
pub use adam::Adam;
pub use batchnorm::{BatchNorm, BnMode};
pub use conv::Conv2d;
pub use loss::mse_loss;
pub use network::{Network, NetworkGrads, NetworkSpec, TrainCache};
pub use tensor::Tensor4;
pub use train::{train, EpochLog, Samples, TrainConfig, TrainLog};

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Toggles intra-op parallelism over batch items. Kernels produce the same
/// bits either way; the sequential mode exists to rule the thread pool out.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}
