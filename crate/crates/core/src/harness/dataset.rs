//! Paired (true channel, AMP estimate) samples and their binary container.

use std::path::Path;

use num_complex::Complex;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{derive_seed, ExperimentConfig, Stream};
use crate::channel::{dictionary, sample_paths, subcarrier_channel};
use crate::error::{Error, Result};
use crate::io::{kind_tag, read_file, write_file, RecordReader, TensorRecord, KIND_DATASET};
use crate::linalg::CMatrix;
use crate::measurement::{build_setup, observe, Signal};
use crate::nn::{parallel_enabled, Samples, Tensor4};
use crate::recovery::{amp, estimate_channel_matrix, AmpConfig, ReshapeMode};
use crate::C64;

const DATASET_VERSION: f64 = 1.0;
const META_COLUMNS: usize = 4;
const HEADER_LEN: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub h_true: CMatrix<f64>,
    pub h_amp: CMatrix<f64>,
    pub y: Vec<C64>,
    pub noise_var: f64,
    pub snr_db: f64,
    pub subcarrier: usize,
}

/// Everything needed to rerun estimators on the stored observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_r: usize,
    pub n_t: usize,
    pub k_sub: usize,
    pub amp: AmpConfig,
    pub reshape: ReshapeMode,
    /// Stacked measurement matrix, `rows x N_r N_t`.
    pub phi: CMatrix<f64>,
    /// Dictionary, `N_r N_t x G_r G_t`.
    pub psi: CMatrix<f64>,
    pub samples: Vec<Sample>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Train/test indices: `floor(S (1 - f))` training samples overall, with the
/// held-out samples spread as evenly as possible over the SNR blocks.
pub fn split_indices(blocks: usize, per_block: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let total = blocks * per_block;
    let n_train = ((total as f64) * (1.0 - test_fraction) + 1e-9).floor() as usize;
    let n_test = total - n_train.min(total);
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n_test);
    for b in 0..blocks {
        let take = (n_test / blocks + usize::from(b < n_test % blocks)).min(per_block);
        let mut idx: Vec<usize> = (b * per_block..(b + 1) * per_block).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            Stream::Split,
            b as u64,
        )));
        test.extend_from_slice(&idx[..take]);
        train.extend_from_slice(&idx[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Draws `samples_per_snr` channels per SNR, observes them through one fixed
/// measurement setup and runs AMP on each. Sample `j` uses its own derived
/// seed, so the result does not depend on the thread count.
pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let sys = &cfg.system;
    let (n_r, n_t) = (sys.n_r(), sys.n_t());
    let dict = dictionary::<f64>(sys.rx, sys.tx, cfg.grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, Stream::Setup, 0));
    let setup = build_setup(sys, dict.psi, &mut rng)?;
    let per = cfg.samples_per_snr;

    let make = |j: usize| -> Result<Sample> {
        let snr_db = cfg.snr_grid_db[j / per];
        let subcarrier = (j % per) % sys.k_sub;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, Stream::Sample, j as u64));
        let paths = sample_paths::<f64, _>(&mut rng, &cfg.channel)?;
        let h_true = subcarrier_channel(&paths, sys.rx, sys.tx, subcarrier, sys.k_sub, cfg.channel.rolloff)?;
        let obs = observe(&setup, Signal::Channel(&h_true), snr_db, &mut rng)?;
        let coeffs = amp(&obs.y, &setup.a_eff, &cfg.amp)?;
        let h_amp = estimate_channel_matrix(&coeffs, &setup.psi, n_r, n_t, cfg.reshape)?;
        Ok(Sample {
            h_true,
            h_amp,
            y: obs.y,
            noise_var: obs.noise_var,
            snr_db,
            subcarrier,
        })
    };
    let total = cfg.total_samples();
    let samples = if parallel_enabled() {
        (0..total).into_par_iter().map(make).collect::<Result<Vec<_>>>()?
    } else {
        (0..total).map(make).collect::<Result<Vec<_>>>()?
    };
    let (train, test) = split_indices(cfg.snr_grid_db.len(), per, cfg.test_fraction, cfg.seed);
    Ok(Dataset {
        n_r,
        n_t,
        k_sub: sys.k_sub,
        amp: cfg.amp,
        reshape: cfg.reshape,
        phi: setup.phi,
        psi: setup.psi,
        samples,
        train,
        test,
    })
}

fn record_matrix(m: &CMatrix<f64>) -> Result<TensorRecord> {
    TensorRecord::complex(vec![m.rows(), m.cols()], m.as_slice())
}

fn read_matrix(r: &mut RecordReader<'_>) -> Result<CMatrix<f64>> {
    let rec = r.next_record()?;
    if rec.dims.len() != 2 {
        return Err(Error::Format(format!("expected a matrix, got dims {:?}", rec.dims)));
    }
    CMatrix::from_vec(rec.dims[0], rec.dims[1], rec.to_complex()?)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `Phi Psi`, recomputed from the stored factors.
    pub fn a_eff(&self) -> Result<CMatrix<f64>> {
        self.phi.matmul(&self.psi)
    }

    /// Distinct SNR values in order of first appearance.
    pub fn snr_values(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for s in &self.samples {
            if !out.contains(&s.snr_db) {
                out.push(s.snr_db);
            }
        }
        out
    }

    /// Indices of `subset` grouped by SNR, in [`Dataset::snr_values`] order.
    pub fn group_by_snr(&self, subset: &[usize]) -> Vec<(f64, Vec<usize>)> {
        self.snr_values()
            .into_iter()
            .map(|snr| {
                (
                    snr,
                    subset
                        .iter()
                        .copied()
                        .filter(|&i| self.samples[i].snr_db == snr)
                        .collect(),
                )
            })
            .filter(|(_, v): &(f64, Vec<usize>)| !v.is_empty())
            .collect()
    }

    /// Per-sample scale `1 / ||Ĥ_AMP||_F` (1 for an all-zero estimate).
    pub fn input_scale(&self, i: usize) -> f64 {
        let n = self.samples[i].h_amp.frobenius_norm();
        if n > 0.0 {
            1.0 / n
        } else {
            1.0
        }
    }

    /// Network inputs `[n, 2, N_r, N_t]` (real, imaginary planes) after scaling.
    pub fn input_tensor(&self, idx: &[usize]) -> Tensor4<f32> {
        self.tensor(idx, |s| &s.h_amp)
    }

    /// Targets scaled by the same per-sample factor as the inputs.
    pub fn target_tensor(&self, idx: &[usize]) -> Tensor4<f32> {
        self.tensor(idx, |s| &s.h_true)
    }

    fn tensor(&self, idx: &[usize], pick: impl Fn(&Sample) -> &CMatrix<f64>) -> Tensor4<f32> {
        let scales: Vec<f64> = idx.iter().map(|&i| self.input_scale(i)).collect();
        Tensor4::from_fn([idx.len(), 2, self.n_r, self.n_t], |[n, c, r, t]| {
            let z = pick(&self.samples[idx[n]])[(r, t)];
            ((if c == 0 { z.re } else { z.im }) * scales[n]) as f32
        })
    }

    pub fn network_samples(&self, idx: &[usize]) -> Result<Samples<f32>> {
        Samples::new(self.input_tensor(idx), self.target_tensor(idx))
    }

    /// Undoes the input scaling of a network output for samples `idx`.
    pub fn unscale(&self, idx: &[usize], out: &Tensor4<f32>) -> Result<Vec<CMatrix<f64>>> {
        if out.dims() != [idx.len(), 2, self.n_r, self.n_t] {
            return Err(Error::Dimension(format!("network output {:?}", out.dims())));
        }
        Ok(idx
            .iter()
            .enumerate()
            .map(|(n, &i)| {
                let s = 1.0 / self.input_scale(i);
                CMatrix::from_fn(self.n_r, self.n_t, |r, t| {
                    Complex::new(out[[n, 0, r, t]] as f64 * s, out[[n, 1, r, t]] as f64 * s)
                })
            })
            .collect())
    }

    /// Container: tag, header, per-sample meta `[S, 4]` with rows
    /// `(snr_db, subcarrier, noise_var, is_test)`, then `Phi`, `Psi`,
    /// `H` `[S, N_r, N_t]`, `Ĥ_AMP` and `y` `[S, rows]`.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let s = self.len();
        let rows = self.phi.rows();
        if self.samples.iter().any(|x| x.y.len() != rows) {
            return Err(Error::Dimension("observation length differs from Phi".into()));
        }
        let header = [
            self.n_r as f64,
            self.n_t as f64,
            self.k_sub as f64,
            self.amp.iterations as f64,
            self.amp.lambda,
            self.amp.tolerance.unwrap_or(f64::NAN),
            f64::from(u8::from(self.amp.normalize_operator)),
            f64::from(u8::from(self.reshape == ReshapeMode::Reshape)),
            s as f64,
        ];
        let mut is_test = vec![false; s];
        for &i in &self.test {
            is_test[i] = true;
        }
        let meta: Vec<f64> = self
            .samples
            .iter()
            .zip(&is_test)
            .flat_map(|(x, &t)| [x.snr_db, x.subcarrier as f64, x.noise_var, f64::from(u8::from(t))])
            .collect();
        let flat = |f: &dyn Fn(&Sample) -> &[C64]| -> Vec<C64> {
            self.samples.iter().flat_map(|x| f(x).iter().copied()).collect()
        };
        let mut out = Vec::new();
        kind_tag(KIND_DATASET, DATASET_VERSION).encode(&mut out);
        TensorRecord::real(vec![HEADER_LEN], &header)?.encode(&mut out);
        TensorRecord::real(vec![s, META_COLUMNS], &meta)?.encode(&mut out);
        record_matrix(&self.phi)?.encode(&mut out);
        record_matrix(&self.psi)?.encode(&mut out);
        let dims = vec![s, self.n_r, self.n_t];
        TensorRecord::complex(dims.clone(), &flat(&|x| x.h_true.as_slice()))?.encode(&mut out);
        TensorRecord::complex(dims, &flat(&|x| x.h_amp.as_slice()))?.encode(&mut out);
        TensorRecord::complex(vec![s, rows], &flat(&|x| &x.y))?.encode(&mut out);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = RecordReader::new(bytes);
        let version = r.expect_kind(KIND_DATASET)?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let header = r.next_record()?;
        header.expect_dims(&[HEADER_LEN])?;
        let h = header.to_real::<f64>()?;
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Format(format!("bad count {v} in dataset header")))
            }
        };
        let (n_r, n_t, k_sub) = (as_count(h[0])?, as_count(h[1])?, as_count(h[2])?);
        let amp_cfg = AmpConfig {
            iterations: as_count(h[3])?,
            lambda: h[4],
            tolerance: (!h[5].is_nan()).then_some(h[5]),
            normalize_operator: h[6] != 0.0,
        };
        let reshape = if h[7] != 0.0 {
            ReshapeMode::Reshape
        } else {
            ReshapeMode::Project
        };
        let s = as_count(h[8])?;
        let meta = r.next_record()?;
        meta.expect_dims(&[s, META_COLUMNS])?;
        let meta = meta.to_real::<f64>()?;
        let phi = read_matrix(&mut r)?;
        let psi = read_matrix(&mut r)?;
        if phi.cols() != n_r * n_t || psi.rows() != n_r * n_t {
            return Err(Error::Format("Phi/Psi do not match the channel size".into()));
        }
        let rows = phi.rows();
        let mut block = |dims: &[usize]| -> Result<Vec<C64>> {
            let rec = r.next_record()?;
            rec.expect_dims(dims)?;
            rec.to_complex()
        };
        let h_true = block(&[s, n_r, n_t])?;
        let h_amp = block(&[s, n_r, n_t])?;
        let ys = block(&[s, rows])?;
        if !r.is_done() {
            return Err(Error::Format("trailing bytes after dataset".into()));
        }
        let per = n_r * n_t;
        let mut samples = Vec::with_capacity(s);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for i in 0..s {
            let m = &meta[i * META_COLUMNS..(i + 1) * META_COLUMNS];
            samples.push(Sample {
                h_true: CMatrix::from_vec(n_r, n_t, h_true[i * per..(i + 1) * per].to_vec())?,
                h_amp: CMatrix::from_vec(n_r, n_t, h_amp[i * per..(i + 1) * per].to_vec())?,
                y: ys[i * rows..(i + 1) * rows].to_vec(),
                noise_var: m[2],
                snr_db: m[0],
                subcarrier: as_count(m[1])?,
            });
            if m[3] != 0.0 {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        Ok(Self {
            n_r,
            n_t,
            k_sub,
            amp: amp_cfg,
            reshape,
            phi,
            psi,
            samples,
            train,
            test,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_floor_rule() {
        let (train, test) = split_indices(2, 2, 1.0 / 6.0, 3);
        assert_eq!((train.len(), test.len()), (3, 1));
        let (train, test) = split_indices(6, 200, 1.0 / 6.0, 3);
        assert_eq!((train.len(), test.len()), (1000, 200));
        let (train, test) = split_indices(6, 1000, 1.0 / 6.0, 3);
        assert_eq!((train.len(), test.len()), (5000, 1000));
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let (train, test) = split_indices(6, 200, 1.0 / 6.0, 9);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1200).collect::<Vec<_>>());
        for b in 0..6 {
            let n = test.iter().filter(|&&i| i / 200 == b).count();
            assert!(n == 33 || n == 34, "block {b} has {n}");
        }
    }
}
