//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored; lists are comma separated.
//! Unknown keys are errors. Keys not given keep the desk-scale defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{ArrayGeometry, ChannelParams, GridSpec};
use crate::error::{Error, Result};
use crate::measurement::SystemConfig;
use crate::nn::{NetworkSpec, TrainConfig};
use crate::recovery::{AmpConfig, ReshapeMode};
use crate::slimming::PruneConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub grid: GridSpec,
    pub channel: ChannelParams,
    pub snr_grid_db: Vec<f64>,
    pub samples_per_snr: usize,
    /// Fraction of samples held out for testing.
    pub test_fraction: f64,
    pub amp: AmpConfig,
    pub reshape: ReshapeMode,
    pub omp_sparsity: usize,
    /// Training channels used to estimate the LMMSE prior.
    pub lmmse_samples: usize,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    /// Refine settings; its `ratio` is overridden by each entry of `prune_ratios`.
    pub prune: PruneConfig,
    pub prune_ratios: Vec<f64>,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    /// Desk-scale profile: 16 transmit and 8 receive antennas.
    fn default() -> Self {
        let tx = ArrayGeometry { n_x: 4, n_z: 4 };
        let rx = ArrayGeometry { n_x: 4, n_z: 2 };
        Self {
            system: SystemConfig {
                tx,
                rx,
                l_t: 2,
                l_r: 4,
                n_s: 2,
                k_sub: 8,
                m_frames: 24,
            },
            grid: GridSpec::critical(rx, tx),
            channel: ChannelParams::default(),
            snr_grid_db: vec![-5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
            samples_per_snr: 200,
            test_fraction: 1.0 / 6.0,
            amp: AmpConfig::default(),
            reshape: ReshapeMode::Project,
            omp_sparsity: 8,
            lmmse_samples: 500,
            network: NetworkSpec::dcnn(),
            train: TrainConfig {
                epochs: 15,
                learning_rate: 1e-3,
                batch_size: 32,
                lambda_reg: 1e-4,
                seed: 0,
            },
            prune: PruneConfig::default(),
            prune_ratios: vec![0.7],
            seed: 1,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        line,
        message: format!("`{key}`: cannot parse `{v}`"),
    })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config {
            line,
            message: format!("`{key}`: expected a boolean, got `{v}`"),
        }),
    }
}

fn parse_list(line: usize, key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(line, key, s))
        .collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Parses on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut grid_set = false;
        let mut streams_set = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected `key = value`, got `{body}`"),
            })?;
            let (key, v) = (key.trim(), value.trim());
            let n = |k: &str| parse_num::<usize>(line, k, v);
            match key {
                "tx_x" => cfg.system.tx.n_x = n(key)?,
                "tx_z" => cfg.system.tx.n_z = n(key)?,
                "rx_x" => cfg.system.rx.n_x = n(key)?,
                "rx_z" => cfg.system.rx.n_z = n(key)?,
                "rf_chains_tx" => cfg.system.l_t = n(key)?,
                "rf_chains_rx" => cfg.system.l_r = n(key)?,
                "streams" => {
                    cfg.system.n_s = n(key)?;
                    streams_set = true;
                }
                "subcarriers" => cfg.system.k_sub = n(key)?,
                "frames" => cfg.system.m_frames = n(key)?,
                "grid_tx_x" | "grid_tx_z" | "grid_rx_x" | "grid_rx_z" => {
                    if !grid_set {
                        cfg.grid = GridSpec::critical(cfg.system.rx, cfg.system.tx);
                        grid_set = true;
                    }
                    let g = n(key)?;
                    match key {
                        "grid_tx_x" => cfg.grid.g_tx = g,
                        "grid_tx_z" => cfg.grid.g_tz = g,
                        "grid_rx_x" => cfg.grid.g_rx = g,
                        _ => cfg.grid.g_rz = g,
                    }
                }
                "paths" => cfg.channel.num_paths = n(key)?,
                "taps" => cfg.channel.num_taps = n(key)?,
                "sampling_period" => cfg.channel.sampling_period = parse_num(line, key, v)?,
                "rolloff" => cfg.channel.rolloff = parse_num(line, key, v)?,
                "tap_aligned" => cfg.channel.tap_aligned = parse_bool(line, key, v)?,
                "snr_db" => cfg.snr_grid_db = parse_list(line, key, v)?,
                "samples_per_snr" => cfg.samples_per_snr = n(key)?,
                "test_fraction" => cfg.test_fraction = parse_num(line, key, v)?,
                "amp_iterations" => cfg.amp.iterations = n(key)?,
                "amp_lambda" => cfg.amp.lambda = parse_num(line, key, v)?,
                "amp_tolerance" => {
                    cfg.amp.tolerance = if v == "none" {
                        None
                    } else {
                        Some(parse_num(line, key, v)?)
                    }
                }
                "amp_normalize" => cfg.amp.normalize_operator = parse_bool(line, key, v)?,
                "reshape" => {
                    cfg.reshape = match v {
                        "project" => ReshapeMode::Project,
                        "reshape" => ReshapeMode::Reshape,
                        _ => {
                            return Err(Error::Config {
                                line,
                                message: format!("`reshape` must be `project` or `reshape`, got `{v}`"),
                            })
                        }
                    }
                }
                "omp_sparsity" => cfg.omp_sparsity = n(key)?,
                "lmmse_samples" => cfg.lmmse_samples = n(key)?,
                "net_width" => {
                    let w = n(key)?;
                    cfg.network.hidden.iter_mut().for_each(|c| *c = w);
                }
                "net_depth" => {
                    let width = cfg.network.hidden.first().copied().unwrap_or(NetworkSpec::DCNN_WIDTH);
                    cfg.network.hidden = vec![width; n(key)?];
                }
                "epochs" => cfg.train.epochs = n(key)?,
                "learning_rate" => cfg.train.learning_rate = parse_num(line, key, v)?,
                "batch_size" => cfg.train.batch_size = n(key)?,
                "lambda_reg" => cfg.train.lambda_reg = parse_num(line, key, v)?,
                "prune_ratios" => cfg.prune_ratios = parse_list(line, key, v)?,
                "refine_epochs" => cfg.prune.refine_epochs = n(key)?,
                "refine_lr" => cfg.prune.refine_lr = parse_num(line, key, v)?,
                "keep_one_per_layer" => cfg.prune.keep_one_per_layer = parse_bool(line, key, v)?,
                "seed" => cfg.seed = parse_num(line, key, v)?,
                "output_dir" => cfg.output_dir = PathBuf::from(v),
                _ => {
                    return Err(Error::Config {
                        line,
                        message: format!("unknown key `{key}`"),
                    })
                }
            }
        }
        if !grid_set {
            cfg.grid = GridSpec::critical(cfg.system.rx, cfg.system.tx);
        }
        if !streams_set {
            cfg.system.n_s = cfg.system.l_t;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text form; parses back to the same config.
    pub fn to_text(&self) -> String {
        let s = &self.system;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("tx_x", s.tx.n_x.to_string());
        kv("tx_z", s.tx.n_z.to_string());
        kv("rx_x", s.rx.n_x.to_string());
        kv("rx_z", s.rx.n_z.to_string());
        kv("rf_chains_tx", s.l_t.to_string());
        kv("rf_chains_rx", s.l_r.to_string());
        kv("streams", s.n_s.to_string());
        kv("subcarriers", s.k_sub.to_string());
        kv("frames", s.m_frames.to_string());
        kv("grid_tx_x", self.grid.g_tx.to_string());
        kv("grid_tx_z", self.grid.g_tz.to_string());
        kv("grid_rx_x", self.grid.g_rx.to_string());
        kv("grid_rx_z", self.grid.g_rz.to_string());
        kv("paths", self.channel.num_paths.to_string());
        kv("taps", self.channel.num_taps.to_string());
        kv("sampling_period", self.channel.sampling_period.to_string());
        kv("rolloff", self.channel.rolloff.to_string());
        kv("tap_aligned", self.channel.tap_aligned.to_string());
        kv("snr_db", join(&self.snr_grid_db));
        kv("samples_per_snr", self.samples_per_snr.to_string());
        kv("test_fraction", self.test_fraction.to_string());
        kv("amp_iterations", self.amp.iterations.to_string());
        kv("amp_lambda", self.amp.lambda.to_string());
        kv(
            "amp_tolerance",
            self.amp.tolerance.map_or("none".into(), |t| t.to_string()),
        );
        kv("amp_normalize", self.amp.normalize_operator.to_string());
        kv(
            "reshape",
            match self.reshape {
                ReshapeMode::Project => "project".into(),
                ReshapeMode::Reshape => "reshape".into(),
            },
        );
        kv("omp_sparsity", self.omp_sparsity.to_string());
        kv("lmmse_samples", self.lmmse_samples.to_string());
        kv("net_depth", self.network.hidden.len().to_string());
        kv(
            "net_width",
            self.network
                .hidden
                .first()
                .copied()
                .unwrap_or(NetworkSpec::DCNN_WIDTH)
                .to_string(),
        );
        kv("epochs", self.train.epochs.to_string());
        kv("learning_rate", self.train.learning_rate.to_string());
        kv("batch_size", self.train.batch_size.to_string());
        kv("lambda_reg", self.train.lambda_reg.to_string());
        kv("prune_ratios", join(&self.prune_ratios));
        kv("refine_epochs", self.prune.refine_epochs.to_string());
        kv("refine_lr", self.prune.refine_lr.to_string());
        kv("keep_one_per_layer", self.prune.keep_one_per_layer.to_string());
        kv("seed", self.seed.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        out
    }

    pub fn validate(&self) -> Result<()> {
        ArrayGeometry::new(self.system.tx.n_x, self.system.tx.n_z)?;
        ArrayGeometry::new(self.system.rx.n_x, self.system.rx.n_z)?;
        self.system.validate()?;
        self.grid.validate()?;
        self.channel.validate()?;
        self.amp.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        if self.network.in_channels != 2 || self.network.out_channels != 2 {
            return Err(Error::InvalidConfig("the refiner maps 2 channels to 2 channels".into()));
        }
        if self.snr_grid_db.is_empty() {
            return Err(Error::InvalidConfig("snr grid is empty".into()));
        }
        if self.snr_grid_db.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidConfig("snr grid contains NaN".into()));
        }
        if self.samples_per_snr == 0 {
            return Err(Error::InvalidConfig("samples_per_snr must be positive".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "test_fraction {} outside (0, 1)",
                self.test_fraction
            )));
        }
        if self.omp_sparsity == 0 {
            return Err(Error::InvalidConfig("omp_sparsity must be positive".into()));
        }
        if self.reshape == ReshapeMode::Reshape
            && (self.grid.g_r() != self.system.n_r() || self.grid.g_t() != self.system.n_t())
        {
            return Err(Error::InvalidConfig("reshape mode needs a critical grid".into()));
        }
        for &r in &self.prune_ratios {
            PruneConfig {
                ratio: r,
                ..self.prune.clone()
            }
            .validate()?;
        }
        Ok(())
    }

    /// Total number of samples.
    pub fn total_samples(&self) -> usize {
        self.snr_grid_db.len() * self.samples_per_snr
    }
}
