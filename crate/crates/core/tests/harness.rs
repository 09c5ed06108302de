use std::path::PathBuf;

use num_complex::Complex;
use prince_core::channel::{dictionary, sample_complex_normal, ArrayGeometry, GridSpec};
use prince_core::harness::dataset::split_indices;
use prince_core::harness::metrics::{parse_metrics_json, prince_method, AMP_DCNN};
use prince_core::harness::*;
use prince_core::linalg::CMatrix;
use prince_core::nn::set_parallel;
use prince_core::recovery::{amp, estimate_channel_matrix, AmpConfig, ReshapeMode};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type C = Complex<f64>;

const TINY: &str = "
tx_x = 4
tx_z = 1
rx_x = 2
rx_z = 1
rf_chains_tx = 1
rf_chains_rx = 1
subcarriers = 4
frames = 6
paths = 2
taps = 2
snr_db = 0, 10
samples_per_snr = 6
omp_sparsity = 2
lmmse_samples = 20
net_width = 4
net_depth = 2
epochs = 2
batch_size = 4
refine_epochs = 1
";

fn tiny() -> ExperimentConfig {
    ExperimentConfig::parse(TINY).unwrap()
}

fn without_times(mut r: Vec<MetricsRecord>) -> Vec<MetricsRecord> {
    r.iter_mut().for_each(|m| m.seconds = 0.0);
    r
}

#[test]
fn shipped_profiles_parse_and_validate() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "conf") {
            let cfg = ExperimentConfig::load(&path).unwrap();
            cfg.validate().unwrap();
            assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
            seen += 1;
        }
    }
    assert!(seen >= 3);
}

#[test]
fn tiny_split_follows_floor_rule() {
    let mut cfg = tiny();
    cfg.samples_per_snr = 2;
    let ds = generate_dataset(&cfg).unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!((ds.train.len(), ds.test.len()), (3, 1));
}

#[test]
fn paper_sized_dataset_count() {
    let mut cfg = tiny();
    cfg.snr_grid_db = vec![-5.0, 0.0, 5.0, 10.0, 15.0, 20.0];
    cfg.samples_per_snr = 1000;
    let ds = generate_dataset(&cfg).unwrap();
    assert_eq!(ds.len(), 6000);
    assert_eq!((ds.train.len(), ds.test.len()), (5000, 1000));
    for (_, idx) in ds.group_by_snr(&ds.test) {
        assert!(idx.len() == 166 || idx.len() == 167);
    }
    let (train, test) = split_indices(6, 1000, 1.0 / 6.0, 1);
    assert_eq!((train, test), (ds.train.clone(), ds.test.clone()));
}

#[test]
fn datasets_are_byte_identical_across_runs_and_thread_modes() {
    let cfg = tiny();
    let a = generate_dataset(&cfg).unwrap().encode().unwrap();
    let b = generate_dataset(&cfg).unwrap().encode().unwrap();
    assert_eq!(a, b);
    set_parallel(false);
    let c = generate_dataset(&cfg).unwrap().encode().unwrap();
    set_parallel(true);
    assert_eq!(a, c);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(generate_dataset(&other).unwrap().encode().unwrap(), a);
}

#[test]
fn dataset_file_round_trip_and_stored_amp_reproduces() {
    let ds = generate_dataset(&tiny()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.prnc");
    ds.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, ds);
    let a_eff = back.a_eff().unwrap();
    for s in &back.samples {
        let h = amp(&s.y, &a_eff, &back.amp).unwrap();
        let m = estimate_channel_matrix(&h, &back.psi, back.n_r, back.n_t, back.reshape).unwrap();
        assert!(m.max_abs_diff(&s.h_amp) < 1e-9);
    }
}

/// A dataset around an i.i.d. Gaussian 128 x 256 operator with noiseless
/// 4-sparse channels, so both sparse solvers must succeed.
fn gaussian_fixture() -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n_r, n_t) = (16, 16);
    let phi = CMatrix::from_fn(128, 256, |_, _| sample_complex_normal(&mut rng, 1.0 / 128.0));
    let samples = (0..24)
        .map(|i| {
            let mut h = vec![C::new(0.0, 0.0); 256];
            let mut placed = 0;
            while placed < 4 {
                let j = rng.random_range(0..256);
                if h[j] == C::new(0.0, 0.0) {
                    let g: C = sample_complex_normal(&mut rng, 1.0);
                    h[j] = g / g.norm() * (1.0 + g.norm());
                    placed += 1;
                }
            }
            let h_true = CMatrix::unvec_row(&h, n_r, n_t).unwrap();
            Sample {
                y: phi.matvec(&h).unwrap(),
                h_amp: h_true.clone(),
                h_true,
                noise_var: 1e-9,
                snr_db: if i % 2 == 0 { 30.0 } else { 40.0 },
                subcarrier: 0,
            }
        })
        .collect();
    Dataset {
        n_r,
        n_t,
        k_sub: 1,
        amp: AmpConfig::default(),
        reshape: ReshapeMode::Project,
        phi,
        psi: CMatrix::identity(256),
        samples,
        train: (0..18).collect(),
        test: (18..24).collect(),
    }
}

#[test]
fn noiseless_fixture_baselines_recover() {
    let ds = gaussian_fixture();
    let mut cfg = tiny();
    cfg.omp_sparsity = 4;
    let recs = run_baselines(&cfg, &ds).unwrap();
    for name in ["AMP", "OMP"] {
        let r = recs.iter().find(|r| r.method == name).unwrap();
        assert_eq!(r.points.len(), 2);
        for p in &r.points {
            assert!(p.nmse_db < -40.0, "{name} at {}: {} dB", p.snr_db, p.nmse_db);
        }
    }
}

#[test]
fn amp_improves_with_snr_on_desk_geometry() {
    // desk arrays and measurement budget; threshold chosen where AMP is
    // stable on this operator
    let mut cfg = ExperimentConfig {
        snr_grid_db: vec![-5.0, 20.0],
        samples_per_snr: 120,
        ..Default::default()
    };
    cfg.amp.lambda = 2.5;
    let ds = generate_dataset(&cfg).unwrap();
    let recs = run_baselines(&cfg, &ds).unwrap();
    let amp_rec = &recs[0];
    assert_eq!(amp_rec.method, "AMP");
    assert!(amp_rec.at(20.0).unwrap().nmse < amp_rec.at(-5.0).unwrap().nmse);
}

#[test]
fn baselines_are_seed_deterministic() {
    let cfg = tiny();
    let a = run_baselines(&cfg, &generate_dataset(&cfg).unwrap()).unwrap();
    let b = run_baselines(&cfg, &generate_dataset(&cfg).unwrap()).unwrap();
    assert_eq!(without_times(a), without_times(b));
}

#[test]
fn zero_ratio_prince_equals_unpruned() {
    let mut cfg = tiny();
    cfg.prune_ratios = vec![0.0];
    let ds = generate_dataset(&cfg).unwrap();
    let out = run_prince(&cfg, &ds, |_, _| {}).unwrap();
    assert_eq!(out.records.len(), 2);
    assert_eq!(out.records[0].method, AMP_DCNN);
    assert_eq!(out.records[1].method, prince_method(0.0));
    assert_eq!(out.records[0].points, out.records[1].points);
    assert_eq!(out.records[0].params, out.records[1].params);
    assert_eq!(out.stages[0].net, out.net);
    assert!(out.stages[0].refine_log.epochs.is_empty());
}

#[test]
fn prince_pipeline_is_reproducible_sequentially() {
    let mut cfg = tiny();
    cfg.prune_ratios = vec![0.5];
    let ds = generate_dataset(&cfg).unwrap();
    set_parallel(false);
    let a = run_prince(&cfg, &ds, |_, _| {}).unwrap();
    let b = run_prince(&cfg, &ds, |_, _| {}).unwrap();
    set_parallel(true);
    assert_eq!(without_times(a.records), without_times(b.records));
    assert_eq!(a.stages[0].net, b.stages[0].net);
    assert!(a.stages[0].report.params_after < a.stages[0].report.params_before);
}

#[test]
fn reports_round_trip_through_files() {
    let cfg = tiny();
    let ds = generate_dataset(&cfg).unwrap();
    let recs = run_baselines(&cfg, &ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = emit_reports(&recs, &[], dir.path()).unwrap();
    assert!(files.iter().all(|f| f.exists()));
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(parse_metrics_csv(&csv).unwrap(), recs);
    let json = std::fs::read_to_string(dir.path().join("metrics.json")).unwrap();
    assert_eq!(parse_metrics_json(&json).unwrap(), recs);
    let plot = std::fs::read_to_string(dir.path().join("plots/nmse_vs_snr.csv")).unwrap();
    assert_eq!(plot.lines().next().unwrap(), "snr_db,AMP,OMP,LMMSE");
    assert_eq!(plot.lines().count(), 3);
}

fn random_matrices(rng: &mut ChaCha8Rng, n: usize, r: usize, c: usize) -> Vec<CMatrix<f64>> {
    (0..n)
        .map(|_| CMatrix::from_fn(r, c, |_, _| sample_complex_normal(rng, 1.0)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn nmse_is_invariant_to_unitary_rotation(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = ArrayGeometry::new(4, 2).unwrap();
        // the critical receive steering matrix is unitary
        let u = dictionary::<f64>(g, ArrayGeometry::new(1, 1).unwrap(), GridSpec::critical(g, ArrayGeometry::new(1, 1).unwrap()))
            .unwrap()
            .a_r;
        let h = random_matrices(&mut rng, n, 8, 3);
        let e = random_matrices(&mut rng, n, 8, 3);
        let uh: Vec<_> = h.iter().map(|m| u.matmul(m).unwrap()).collect();
        let ue: Vec<_> = e.iter().map(|m| u.matmul(m).unwrap()).collect();
        let a = nmse(&h, &e).unwrap();
        let b = nmse(&uh, &ue).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn nmse_scaling_law(seed in any::<u64>(), s in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_matrices(&mut rng, 3, 2, 4);
        let e: Vec<_> = h.iter().map(|m| m.scale_real(s)).collect();
        let v = nmse(&h, &e).unwrap();
        prop_assert!((v - (1.0 - s).powi(2)).abs() < 1e-12);
    }
}
