//! Channel pruning driven by batch-norm scale magnitudes.
//!
//! All |γ| values are ranked globally; the smallest `⌊ratio·n⌋` channels are
//! removed together with their BN entries, their output filter and the
//! matching input slice of the next convolution. Surviving weights are
//! copied verbatim.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::train::{train_observed, EpochLog, Samples, TrainConfig, TrainLog};
use crate::nn::{BatchNorm, Conv2d, Network, NetworkSpec};
use crate::scalar::Real;

/// Shape of one conv layer, optionally followed by batch norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub batch_norm: bool,
    pub conv_bias: bool,
}

impl NetworkSpec {
    pub fn layers(&self) -> Vec<LayerShape> {
        let n = self.num_convs();
        self.conv_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, (ci, co))| LayerShape {
                in_channels: ci,
                out_channels: co,
                batch_norm: i + 1 < n,
                conv_bias: self.conv_bias,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerParams {
    pub conv: usize,
    pub batch_norm: usize,
}

impl LayerParams {
    pub fn total(&self) -> usize {
        self.conv + self.batch_norm
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub per_layer: Vec<LayerParams>,
    pub total: usize,
}

/// Conv weights (plus biases when enabled) and BN γ, β; running statistics
/// are not parameters.
pub fn count_params(layers: &[LayerShape]) -> ParamCount {
    let per_layer: Vec<LayerParams> = layers
        .iter()
        .map(|l| LayerParams {
            conv: l.in_channels * l.out_channels * 9 + if l.conv_bias { l.out_channels } else { 0 },
            batch_norm: if l.batch_norm { 2 * l.out_channels } else { 0 },
        })
        .collect();
    let total = per_layer.iter().map(LayerParams::total).sum();
    ParamCount { per_layer, total }
}

/// Multiply-accumulates of all convolutions at an `height × width` input.
pub fn count_macs(layers: &[LayerShape], height: usize, width: usize) -> u64 {
    layers
        .iter()
        .map(|l| (height * width * 9 * l.in_channels * l.out_channels) as u64)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Fraction of BN channels to remove, in `[0, 1)`.
    pub ratio: f64,
    pub refine_epochs: usize,
    pub refine_lr: f64,
    /// Keep the strongest channel of a layer that would otherwise be
    /// emptied. When false such a layer is an error.
    pub keep_one_per_layer: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            ratio: 0.7,
            refine_epochs: 5,
            refine_lr: 1e-3,
            keep_one_per_layer: true,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ratio) {
            return Err(Error::InvalidConfig(format!(
                "pruning ratio {} outside [0, 1)",
                self.ratio
            )));
        }
        if !(self.refine_lr >= 0.0 && self.refine_lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "refine_lr {} must be non-negative",
                self.refine_lr
            )));
        }
        Ok(())
    }
}

/// One BN channel's |γ| and where it lives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaEntry {
    pub magnitude: f64,
    pub layer: usize,
    pub channel: usize,
}

/// All |γ| in ascending order; ties ordered by `(layer, channel)`.
pub fn collect_gammas<T: Real>(net: &Network<T>) -> Vec<GammaEntry> {
    let mut out: Vec<GammaEntry> = net
        .bns
        .iter()
        .enumerate()
        .flat_map(|(layer, bn)| {
            bn.gamma.iter().enumerate().map(move |(channel, g)| GammaEntry {
                magnitude: g.as_f64().abs(),
                layer,
                channel,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        a.magnitude
            .total_cmp(&b.magnitude)
            .then(a.layer.cmp(&b.layer))
            .then(a.channel.cmp(&b.channel))
    });
    out
}

/// Number of channels a ratio selects out of `n`.
pub fn prune_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).floor() as usize).min(n)
}

/// Midpoint between the largest pruned and the smallest kept magnitude.
/// When nothing is pruned the threshold sits below the minimum.
pub fn threshold_for_ratio(gammas: &[GammaEntry], ratio: f64) -> Result<f64> {
    if gammas.is_empty() {
        return Err(Error::Empty("no batch-norm scales to rank".into()));
    }
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidConfig(format!("pruning ratio {ratio} outside [0, 1)")));
    }
    let k = prune_count(gammas.len(), ratio);
    Ok(if k == 0 {
        gammas[0].magnitude - 1.0
    } else {
        0.5 * (gammas[k - 1].magnitude + gammas[k].magnitude)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPrune {
    pub layer: usize,
    pub channels_before: usize,
    pub kept_indices: Vec<usize>,
    pub removed_count: usize,
}

/// A pruned channel whose β was not zero; dropping it changes the output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossyChannel {
    pub layer: usize,
    pub channel: usize,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub requested_ratio: f64,
    pub realized_ratio: f64,
    pub threshold: f64,
    pub per_layer: Vec<LayerPrune>,
    pub params_before: usize,
    pub params_after: usize,
    /// Spatial size the MAC figures refer to.
    pub reference_dims: (usize, usize),
    pub macs_before: u64,
    pub macs_after: u64,
    /// Layers where the keep-one guard restored a channel.
    pub guarded_layers: Vec<usize>,
    pub lossy_channels: Vec<LossyChannel>,
}

impl PruneReport {
    pub fn removed_total(&self) -> usize {
        self.per_layer.iter().map(|l| l.removed_count).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// One row per BN layer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,channels_before,channels_after,removed\n");
        for l in &self.per_layer {
            out.push_str(&format!(
                "{},{},{},{}\n",
                l.layer,
                l.channels_before,
                l.kept_indices.len(),
                l.removed_count
            ));
        }
        out
    }
}

/// Channels kept per BN layer for a ratio, plus the layers the guard touched.
fn select_kept<T: Real>(net: &Network<T>, cfg: &PruneConfig) -> Result<(f64, Vec<Vec<bool>>, Vec<usize>)> {
    let gammas = collect_gammas(net);
    let threshold = threshold_for_ratio(&gammas, cfg.ratio)?;
    let k = prune_count(gammas.len(), cfg.ratio);
    let mut keep: Vec<Vec<bool>> = net.bns.iter().map(|b| vec![true; b.channels()]).collect();
    for e in &gammas[..k] {
        keep[e.layer][e.channel] = false;
    }
    let mut guarded = Vec::new();
    for (layer, mask) in keep.iter_mut().enumerate() {
        if mask.iter().any(|&k| k) {
            continue;
        }
        if !cfg.keep_one_per_layer {
            return Err(Error::LayerEmptied { layer });
        }
        // the last entry of this layer in ascending order is its strongest
        let best = gammas
            .iter()
            .rev()
            .find(|e| e.layer == layer)
            .expect("layer has channels");
        mask[best.channel] = true;
        guarded.push(layer);
    }
    Ok((threshold, keep, guarded))
}

/// Structurally removes the selected channels. `reference_dims` sets the
/// input size for the MAC figures in the report.
pub fn prune<T: Real>(
    net: &Network<T>,
    cfg: &PruneConfig,
    reference_dims: (usize, usize),
) -> Result<(Network<T>, PruneReport)> {
    cfg.validate()?;
    net.validate()?;
    let (threshold, keep, guarded_layers) = select_kept(net, cfg)?;
    let kept: Vec<Vec<usize>> = keep
        .iter()
        .map(|m| m.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect())
        .collect();

    let mut convs = Vec::with_capacity(net.convs.len());
    let mut bns = Vec::with_capacity(net.bns.len());
    for (i, conv) in net.convs.iter().enumerate() {
        let ins: Vec<usize> = if i == 0 {
            (0..conv.in_channels).collect()
        } else {
            kept[i - 1].clone()
        };
        let outs: Vec<usize> = if i < kept.len() {
            kept[i].clone()
        } else {
            (0..conv.out_channels).collect()
        };
        convs.push(slice_conv(conv, &ins, &outs));
        if i < net.bns.len() {
            bns.push(slice_bn(&net.bns[i], &outs));
        }
    }
    let pruned = Network { convs, bns };

    let mut lossy_channels = Vec::new();
    for (layer, (bn, mask)) in net.bns.iter().zip(&keep).enumerate() {
        for (channel, &k) in mask.iter().enumerate() {
            let beta = bn.beta[channel].as_f64();
            if !k && beta != 0.0 {
                lossy_channels.push(LossyChannel { layer, channel, beta });
            }
        }
    }
    let per_layer: Vec<LayerPrune> = kept
        .iter()
        .enumerate()
        .map(|(layer, k)| LayerPrune {
            layer,
            channels_before: net.bns[layer].channels(),
            kept_indices: k.clone(),
            removed_count: net.bns[layer].channels() - k.len(),
        })
        .collect();
    let total: usize = per_layer.iter().map(|l| l.channels_before).sum();
    let removed: usize = per_layer.iter().map(|l| l.removed_count).sum();
    let (before, after) = (net.spec().layers(), pruned.spec().layers());
    let (h, w) = reference_dims;
    let report = PruneReport {
        requested_ratio: cfg.ratio,
        realized_ratio: if total == 0 { 0.0 } else { removed as f64 / total as f64 },
        threshold,
        per_layer,
        params_before: count_params(&before).total,
        params_after: count_params(&after).total,
        reference_dims,
        macs_before: count_macs(&before, h, w),
        macs_after: count_macs(&after, h, w),
        guarded_layers,
        lossy_channels,
    };
    Ok((pruned, report))
}

fn slice_conv<T: Real>(conv: &Conv2d<T>, ins: &[usize], outs: &[usize]) -> Conv2d<T> {
    let mut weight = Vec::with_capacity(ins.len() * outs.len() * 9);
    for &o in outs {
        for &c in ins {
            let base = (o * conv.in_channels + c) * 9;
            weight.extend_from_slice(&conv.weight[base..base + 9]);
        }
    }
    Conv2d {
        in_channels: ins.len(),
        out_channels: outs.len(),
        weight,
        bias: conv.bias.as_ref().map(|b| outs.iter().map(|&o| b[o]).collect()),
    }
}

fn slice_bn<T: Real>(bn: &BatchNorm<T>, keep: &[usize]) -> BatchNorm<T> {
    let pick = |v: &[T]| keep.iter().map(|&i| v[i]).collect::<Vec<T>>();
    BatchNorm {
        gamma: pick(&bn.gamma),
        beta: pick(&bn.beta),
        running_mean: pick(&bn.running_mean),
        running_var: pick(&bn.running_var),
        eps: bn.eps,
        momentum: bn.momentum,
    }
}

/// Copy of `net` with γ and β of every channel the report removed set to 0.
pub fn zero_pruned_channels<T: Real>(net: &Network<T>, report: &PruneReport) -> Result<Network<T>> {
    if report.per_layer.len() != net.bns.len() {
        return Err(Error::Dimension("report does not match the network depth".into()));
    }
    let mut out = net.clone();
    for (bn, layer) in out.bns.iter_mut().zip(&report.per_layer) {
        let mut keep = vec![false; bn.channels()];
        for &i in &layer.kept_indices {
            *keep
                .get_mut(i)
                .ok_or_else(|| Error::Dimension(format!("kept index {i} out of range")))? = true;
        }
        for (c, k) in keep.into_iter().enumerate() {
            if !k {
                bn.gamma[c] = T::zero();
                bn.beta[c] = T::zero();
            }
        }
    }
    Ok(out)
}

/// Fine-tunes a pruned network with λ = 0 and a fresh optimizer.
pub fn refine<T: Real>(
    net: &mut Network<T>,
    train_set: &Samples<T>,
    test_set: Option<&Samples<T>>,
    prune_cfg: &PruneConfig,
    train_cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainLog> {
    prune_cfg.validate()?;
    let cfg = TrainConfig {
        epochs: prune_cfg.refine_epochs,
        learning_rate: prune_cfg.refine_lr,
        lambda_reg: 0.0,
        ..train_cfg.clone()
    };
    train_observed(net, train_set, test_set, &cfg, on_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_dcnn_counts() {
        let layers = NetworkSpec::dcnn().layers();
        assert_eq!(count_params(&layers).total, 372_352);
        assert_eq!(count_macs(&layers, 16, 64), 379_846_656);
        assert_eq!(count_macs(&layers, 32, 512), 6_077_546_496);
    }

    #[test]
    fn small_counts() {
        let single = [LayerShape {
            in_channels: 2,
            out_channels: 64,
            batch_norm: false,
            conv_bias: false,
        }];
        assert_eq!(count_params(&single).total, 1152);
        assert_eq!(count_params(&[]).total, 0);
        let tiny = [LayerShape {
            in_channels: 2,
            out_channels: 2,
            batch_norm: false,
            conv_bias: false,
        }];
        assert_eq!(count_macs(&tiny, 1, 1), 36);
    }

    fn entries(mags: &[f64]) -> Vec<GammaEntry> {
        mags.iter()
            .enumerate()
            .map(|(i, &m)| GammaEntry {
                magnitude: m,
                layer: 0,
                channel: i,
            })
            .collect()
    }

    #[test]
    fn threshold_midpoint() {
        let t = threshold_for_ratio(&entries(&[0.1, 0.2, 0.3, 0.4]), 0.5).unwrap();
        assert!((t - 0.25).abs() < 1e-15);
        let t0 = threshold_for_ratio(&entries(&[0.1, 0.2]), 0.0).unwrap();
        assert!(t0 < 0.1);
        assert!(threshold_for_ratio(&[], 0.5).is_err());
        assert!(threshold_for_ratio(&entries(&[0.1]), 1.0).is_err());
    }

    #[test]
    fn gammas_sorted_with_provenance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::<f32>::zeros(&NetworkSpec::dcnn()).unwrap();
        assert!(collect_gammas(&net).iter().all(|e| e.magnitude == 1.0));
        for bn in &mut net.bns {
            for g in &mut bn.gamma {
                *g = rng.random_range(-1.0..1.0);
            }
        }
        let g = collect_gammas(&net);
        assert_eq!(g.len(), 704);
        assert!(g.windows(2).all(|w| w[0].magnitude <= w[1].magnitude));
        let e = g[100];
        assert_eq!(net.bns[e.layer].gamma[e.channel].abs() as f64, e.magnitude);
    }

    #[test]
    fn guard_keeps_strongest_channel() {
        let mut net = Network::<f64>::zeros(&NetworkSpec::uniform(2, 4, 2, 2)).unwrap();
        net.bns[0].gamma = vec![0.01, 0.02, 0.03, 0.04];
        net.bns[1].gamma = vec![1.0, 2.0, 3.0, 4.0];
        let cfg = PruneConfig {
            ratio: 0.5,
            ..PruneConfig::default()
        };
        let (pruned, report) = prune(&net, &cfg, (1, 1)).unwrap();
        assert_eq!(report.guarded_layers, vec![0]);
        assert_eq!(report.per_layer[0].kept_indices, vec![3]);
        assert_eq!(pruned.bns[0].gamma, vec![0.04]);
        assert!((report.realized_ratio - 3.0 / 8.0).abs() < 1e-15);

        let strict = PruneConfig {
            keep_one_per_layer: false,
            ..cfg
        };
        assert!(matches!(
            prune(&net, &strict, (1, 1)),
            Err(Error::LayerEmptied { layer: 0 })
        ));
    }
}
