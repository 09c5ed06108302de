//! Experiment driver: dataset synthesis, NMSE, baselines, the
//! train/prune/refine pipeline and report files.

pub mod config;
pub mod dataset;
pub mod metrics;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use dataset::{generate_dataset, Dataset, Sample};
pub use metrics::{emit_reports, parse_metrics_csv, MetricsRecord, SnrPoint};
pub use pipeline::{
    evaluate_network, predict, prune_stage, run_baselines, run_prince, train_refiner, Phase, PrinceOutcome, PruneStage,
};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::scalar::Real;

/// dB value reported for an exactly zero error.
pub const NMSE_FLOOR_DB: f64 = -100.0;

/// `Σ ||H - Ĥ||² / Σ ||H||²` over matched pairs.
pub fn nmse<T: Real>(truth: &[CMatrix<T>], estimate: &[CMatrix<T>]) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::Dimension(format!(
            "{} reference channels, {} estimates",
            truth.len(),
            estimate.len()
        )));
    }
    let mut err = 0.0;
    let mut power = 0.0;
    for (h, e) in truth.iter().zip(estimate) {
        if h.shape() != e.shape() {
            return Err(Error::Dimension(format!("{:?} vs {:?}", h.shape(), e.shape())));
        }
        err += h.sub(e)?.frobenius_norm_sqr().as_f64();
        power += h.frobenius_norm_sqr().as_f64();
    }
    if power == 0.0 {
        return Err(Error::ZeroTruth);
    }
    Ok(err / power)
}

/// `10 log10(nmse)`, floored at [`NMSE_FLOOR_DB`].
pub fn to_db(nmse: f64) -> f64 {
    if nmse > 0.0 {
        (10.0 * nmse.log10()).max(NMSE_FLOOR_DB)
    } else {
        NMSE_FLOOR_DB
    }
}

/// Random streams drawn from one experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Setup = 1,
    Sample = 2,
    Split = 3,
    NetInit = 4,
    Train = 5,
    Refine = 6,
}

/// Independent 64-bit seed for `(stream, index)` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add((stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
