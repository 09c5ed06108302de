//! Baseline estimators and the train → prune → refine → evaluate pipeline.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::metrics::{prince_method, AMP_DCNN};
use super::{derive_seed, nmse, Dataset, ExperimentConfig, MetricsRecord, SnrPoint, Stream};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::nn::train::train_observed;
use crate::nn::{parallel_enabled, EpochLog, Network, TrainConfig, TrainLog};
use crate::recovery::{amp, estimate_channel_matrix, omp, ChannelStats, Lmmse};
use crate::slimming::{count_macs, prune, refine, PruneConfig, PruneReport};

/// Runs `f` over `idx`, in parallel unless sequential mode is on. Output
/// order follows `idx` either way.
fn map_indices<T: Send>(idx: &[usize], f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    if parallel_enabled() {
        idx.par_iter().map(|&i| f(i)).collect()
    } else {
        idx.iter().map(|&i| f(i)).collect()
    }
}

/// Per-SNR NMSE of `estimates` (aligned with `idx`) against the stored truth.
pub fn per_snr_nmse(ds: &Dataset, idx: &[usize], estimates: &[CMatrix<f64>]) -> Result<Vec<SnrPoint>> {
    if idx.len() != estimates.len() {
        return Err(Error::Dimension(format!(
            "{} indices, {} estimates",
            idx.len(),
            estimates.len()
        )));
    }
    ds.group_by_snr(idx)
        .into_iter()
        .map(|(snr, group)| {
            let (truth, est): (Vec<_>, Vec<_>) = group
                .iter()
                .map(|i| {
                    let pos = idx.iter().position(|j| j == i).expect("grouped from idx");
                    (ds.samples[*i].h_true.clone(), estimates[pos].clone())
                })
                .unzip();
            Ok(SnrPoint::new(snr, nmse(&truth, &est)?))
        })
        .collect()
}

fn record(ds: &Dataset, method: &str, estimates: Vec<CMatrix<f64>>, started: Instant) -> Result<MetricsRecord> {
    let seconds = started.elapsed().as_secs_f64();
    Ok(MetricsRecord {
        method: method.into(),
        points: per_snr_nmse(ds, &ds.test, &estimates)?,
        params: 0,
        macs: 0,
        seconds,
    })
}

/// AMP, OMP and LMMSE on the test split. All three read the same stored
/// observations, so the comparison is paired.
pub fn run_baselines(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<MetricsRecord>> {
    if ds.test.is_empty() {
        return Err(Error::Empty("test split".into()));
    }
    let a_eff = ds.a_eff()?;
    let (n_r, n_t) = (ds.n_r, ds.n_t);
    let mut out = Vec::with_capacity(3);

    let t0 = Instant::now();
    let est = map_indices(&ds.test, |i| {
        let h = amp(&ds.samples[i].y, &a_eff, &ds.amp)?;
        estimate_channel_matrix(&h, &ds.psi, n_r, n_t, ds.reshape)
    })?;
    out.push(record(ds, "AMP", est, t0)?);

    let t0 = Instant::now();
    let est = map_indices(&ds.test, |i| {
        let res = omp(&ds.samples[i].y, &a_eff, cfg.omp_sparsity)?;
        estimate_channel_matrix(&res.coefficients, &ds.psi, n_r, n_t, ds.reshape)
    })?;
    out.push(record(ds, "OMP", est, t0)?);

    let t0 = Instant::now();
    let prior: Vec<CMatrix<f64>> = ds
        .train
        .iter()
        .take(cfg.lmmse_samples)
        .map(|&i| ds.samples[i].h_true.clone())
        .collect();
    let lmmse = Lmmse::new(ds.phi.clone(), ChannelStats::from_samples(&prior)?)?;
    let est = map_indices(&ds.test, |i| lmmse.estimate(&ds.samples[i].y, ds.samples[i].noise_var))?;
    out.push(record(ds, "LMMSE", est, t0)?);
    Ok(out)
}

/// Eval-mode network estimates on `idx`, rescaled to channel units.
pub fn predict(net: &Network<f32>, ds: &Dataset, idx: &[usize], batch: usize) -> Result<Vec<CMatrix<f64>>> {
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(batch.max(1)) {
        let y = net.forward(&ds.input_tensor(chunk))?;
        out.extend(ds.unscale(chunk, &y)?);
    }
    Ok(out)
}

/// Test-split metrics of a refiner network.
pub fn evaluate_network(method: &str, net: &Network<f32>, ds: &Dataset, batch: usize) -> Result<MetricsRecord> {
    let t0 = Instant::now();
    let est = predict(net, ds, &ds.test, batch)?;
    let mut rec = record(ds, method, est, t0)?;
    rec.params = net.param_count();
    rec.macs = count_macs(&net.spec().layers(), ds.n_r, ds.n_t);
    Ok(rec)
}

fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(cfg.seed, Stream::Train, 0),
        ..cfg.train.clone()
    }
}

/// Trains a fresh refiner on the training split with the configured L1
/// pressure on the BN scales. The log tracks the test split.
pub fn train_refiner(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(Network<f32>, TrainLog)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, Stream::NetInit, 0));
    let mut net = Network::<f32>::new(&cfg.network, &mut rng)?;
    let train_set = ds.network_samples(&ds.train)?;
    let test_set = ds.network_samples(&ds.test)?;
    let log = train_observed(&mut net, &train_set, Some(&test_set), &train_config(cfg), on_epoch)?;
    Ok((net, log))
}

#[derive(Debug, Clone)]
pub struct PruneStage {
    pub ratio: f64,
    pub report: PruneReport,
    pub net: Network<f32>,
    /// Empty when nothing was removed; `initial_test_loss` is the loss
    /// straight after pruning.
    pub refine_log: TrainLog,
}

/// Prunes `net` at `ratio` and refines the result. `index` separates the
/// refine shuffles of different ratios.
pub fn prune_stage(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    net: &Network<f32>,
    ratio: f64,
    index: usize,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<PruneStage> {
    let pcfg = PruneConfig {
        ratio,
        ..cfg.prune.clone()
    };
    let (mut pruned, report) = prune(net, &pcfg, (ds.n_r, ds.n_t))?;
    let refine_log = if report.removed_total() > 0 {
        let train_set = ds.network_samples(&ds.train)?;
        let test_set = ds.network_samples(&ds.test)?;
        let tcfg = TrainConfig {
            seed: derive_seed(cfg.seed, Stream::Refine, index as u64),
            ..cfg.train.clone()
        };
        refine(&mut pruned, &train_set, Some(&test_set), &pcfg, &tcfg, on_epoch)?
    } else {
        TrainLog::default()
    };
    Ok(PruneStage {
        ratio,
        report,
        net: pruned,
        refine_log,
    })
}

#[derive(Debug, Clone)]
pub struct PrinceOutcome {
    /// AMP-DCNN first, then one record per pruning ratio.
    pub records: Vec<MetricsRecord>,
    pub net: Network<f32>,
    pub train_log: TrainLog,
    pub stages: Vec<PruneStage>,
}

/// What the pipeline is doing, for progress output.
#[derive(Debug, Clone, Copy)]
pub enum Phase {
    Train,
    Refine(f64),
}

/// Train with L1 pressure, then prune and refine at every configured ratio.
pub fn run_prince(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    mut progress: impl FnMut(Phase, &EpochLog),
) -> Result<PrinceOutcome> {
    let batch = cfg.train.batch_size;
    let (net, train_log) = train_refiner(cfg, ds, |e| progress(Phase::Train, e))?;
    let mut records = vec![evaluate_network(AMP_DCNN, &net, ds, batch)?];
    let mut stages = Vec::with_capacity(cfg.prune_ratios.len());
    for (k, &ratio) in cfg.prune_ratios.iter().enumerate() {
        let stage = prune_stage(cfg, ds, &net, ratio, k, |e| progress(Phase::Refine(ratio), e))?;
        records.push(evaluate_network(&prince_method(ratio), &stage.net, ds, batch)?);
        stages.push(stage);
    }
    Ok(PrinceOutcome {
        records,
        net,
        train_log,
        stages,
    })
}
