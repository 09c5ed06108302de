use prince_core::nn::gradcheck;
use prince_core::nn::train::evaluate_loss;
use prince_core::nn::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_backward_matches_finite_differences() {
    for check in gradcheck::check_all(7, 100).unwrap() {
        assert!(check.coordinates >= 100, "{check:?}");
        assert!(check.max_rel_error < 1e-5, "{check:?}");
    }
}

#[test]
fn relu_gradient_is_tight() {
    let check = gradcheck::check_relu(3, 200).unwrap();
    assert!(check.max_rel_error < 1e-6, "{check:?}");
}

#[test]
fn mse_gradient_is_tight() {
    let check = gradcheck::check_mse(4, 200).unwrap();
    assert!(check.max_rel_error < 1e-6, "{check:?}");
}

/// Hidden width 4: the first conv copies (x0, x1, -x0, -x1) through its
/// centre tap, BN is an exact identity, ReLU splits signs and the output
/// conv recombines them.
#[test]
fn identity_fixture_passes_input_through() {
    let spec = NetworkSpec::uniform(2, 4, 1, 2);
    let mut net = Network::<f64>::zeros(&spec).unwrap();
    for c in 0..2 {
        *net.convs[0].weight_at_mut(c, c, 1, 1) = 1.0;
        *net.convs[0].weight_at_mut(c + 2, c, 1, 1) = -1.0;
        *net.convs[1].weight_at_mut(c, c, 1, 1) = 1.0;
        *net.convs[1].weight_at_mut(c, c + 2, 1, 1) = -1.0;
    }
    let eps = net.bns[0].eps;
    net.bns[0].running_var = vec![1.0 - eps; 4];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor4::from_fn([3, 2, 4, 6], |_| rng.random_range(-2.0..2.0));
    let y = net.forward(&x).unwrap();
    assert!(y.max_abs_diff(&x) < 1e-15);
}

#[test]
fn dcnn_preserves_mmwave_dims() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = Network::<f32>::new(&NetworkSpec::dcnn(), &mut rng).unwrap();
    let x = Tensor4::zeros([1, 2, 16, 64]);
    assert_eq!(net.forward(&x).unwrap().dims(), [1, 2, 16, 64]);
}

#[test]
fn zero_gamma_makes_layer_weights_irrelevant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = Network::<f32>::new(&NetworkSpec::uniform(2, 8, 3, 2), &mut rng).unwrap();
    for bn in &mut net.bns {
        for c in 0..8 {
            bn.beta[c] = rng.random_range(-0.5..0.5);
            bn.running_mean[c] = rng.random_range(-0.5..0.5);
        }
    }
    net.bns[1].gamma.fill(0.0);
    let x = Tensor4::from_fn([4, 2, 5, 7], |_| rng.random_range(-1.0..1.0f32));
    let before = net.forward(&x).unwrap();
    for w in &mut net.convs[1].weight {
        *w = rng.random_range(-3.0..3.0);
    }
    let after = net.forward(&x).unwrap();
    let bits = |t: &Tensor4<f32>| t.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&before), bits(&after));
}

#[test]
fn parallel_and_sequential_agree_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Network::<f32>::new(&NetworkSpec::uniform(2, 16, 2, 2), &mut rng).unwrap();
    let x = Tensor4::from_fn([5, 2, 4, 8], |_| rng.random_range(-1.0..1.0f32));
    let t = x.map(|v| 0.5 * v);
    let run = |parallel: bool| {
        set_parallel(parallel);
        let mut n = net.clone();
        let (y, cache) = n.forward_train(&x).unwrap();
        let (_, g) = mse_loss(&y, &t).unwrap();
        let grads = n.backward(&cache, &g).unwrap().flatten();
        set_parallel(true);
        (y, grads)
    };
    let (ya, ga) = run(true);
    let (yb, gb) = run(false);
    assert_eq!(ya, yb);
    assert_eq!(ga, gb);
}

fn denoise_set(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Samples<f32> {
    let targets = Tensor4::from_fn([n, 2, h, w], |_| rng.random_range(-1.0..1.0f32));
    let inputs = targets.map(|v| v + 0.0).clone();
    let noisy = Tensor4::from_fn(inputs.dims(), |idx| inputs[idx] + rng.random_range(-0.3..0.3f32));
    Samples::new(noisy, targets).unwrap()
}

/// Noisy 4×8 channel matrices as inputs, clean ones as targets, entries at unit RMS.
fn channel_set(rng: &mut ChaCha8Rng, n: usize, norm: f64) -> Samples<f32> {
    use prince_core::channel::{sample_paths, subcarrier_channel, ArrayGeometry, ChannelParams};
    let rx = ArrayGeometry::new(2, 2).unwrap();
    let tx = ArrayGeometry::new(4, 2).unwrap();
    let hs: Vec<_> = (0..n)
        .map(|i| {
            let paths = sample_paths::<f64, _>(rng, &ChannelParams::default()).unwrap();
            let h = subcarrier_channel(&paths, rx, tx, i % 8, 8, 0.8).unwrap();
            let s = norm / h.frobenius_norm();
            (h, s)
        })
        .collect();
    let targets = Tensor4::from_fn([n, 2, 4, 8], |[i, c, r, t]| {
        let z = hs[i].0[(r, t)];
        ((if c == 0 { z.re } else { z.im }) * hs[i].1) as f32
    });
    let inputs = Tensor4::from_fn(targets.dims(), |idx| {
        targets[idx] + rng.random_range(-0.3..0.3f32) * norm as f32 / 32f32.sqrt()
    });
    Samples::new(inputs, targets).unwrap()
}

#[test]
fn tiny_training_run_halves_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = channel_set(&mut rng, 32, 32f64.sqrt());
    let mut net = Network::<f32>::new(&NetworkSpec::dcnn(), &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let log = train(&mut net, &data, Some(&data), &cfg).unwrap();
    let initial = log.initial_test_loss.unwrap();
    let last = log.final_test_loss().unwrap();
    assert!(last < 0.5 * initial, "initial {initial} final {last}");
}

fn median_abs_gamma(net: &Network<f32>) -> f32 {
    let mut g: Vec<f32> = net.bns.iter().flat_map(|b| b.gamma.iter().map(|v| v.abs())).collect();
    g.sort_by(f32::total_cmp);
    g[g.len() / 2]
}

#[test]
fn l1_pressure_shrinks_gammas() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = channel_set(&mut rng, 32, 1.0);
    let init = Network::<f32>::new(&NetworkSpec::dcnn(), &mut rng).unwrap();
    let run = |lambda: f64| {
        let mut net = init.clone();
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e-2,
            batch_size: 8,
            lambda_reg: lambda,
            seed: 9,
        };
        train(&mut net, &data, None, &cfg).unwrap();
        median_abs_gamma(&net)
    };
    let free = run(0.0);
    let pressed = run(0.1);
    eprintln!("median |γ|: λ=0 {free}, λ=0.1 {pressed}");
    assert!(pressed < 0.5 * free, "λ=0.1 median {pressed}, λ=0 median {free}");
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data = denoise_set(&mut rng, 12, 3, 4);
    let init = Network::<f32>::new(&NetworkSpec::uniform(2, 8, 2, 2), &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 5,
        lambda_reg: 1e-3,
        seed: 11,
        ..TrainConfig::default()
    };
    let run = || {
        let mut net = init.clone();
        let log = train(&mut net, &data, Some(&data), &cfg).unwrap();
        (net, log)
    };
    assert_eq!(run(), run());
}

#[test]
fn evaluation_needs_samples() {
    let net = Network::<f32>::zeros(&NetworkSpec::uniform(2, 2, 1, 2)).unwrap();
    let data = Samples::new(Tensor4::zeros([1, 2, 2, 2]), Tensor4::zeros([1, 2, 2, 2])).unwrap();
    assert_eq!(evaluate_loss(&net, &data, 4).unwrap(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn spatial_dims_are_preserved(h in 1usize..7, w in 1usize..7, n in 1usize..3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::<f32>::new(&NetworkSpec::uniform(2, 5, 2, 2), &mut rng).unwrap();
        let x = Tensor4::from_fn([n, 2, h, w], |_| rng.random_range(-1.0..1.0f32));
        prop_assert_eq!(net.forward(&x).unwrap().dims(), [n, 2, h, w]);
        prop_assert_eq!(net.forward_batch_stats(&x).unwrap().dims(), [n, 2, h, w]);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = denoise_set(&mut rng, 6, 2, 3);
        let mut net = Network::<f32>::new(&NetworkSpec::uniform(2, 4, 2, 2), &mut rng).unwrap();
        let mut before = net.clone();
        let cfg = TrainConfig { epochs: 1, batch_size: 3, learning_rate: 0.0, lambda_reg: 0.5, seed };
        train(&mut net, &data, None, &cfg).unwrap();
        let a: Vec<f32> = net.params_mut().into_iter().map(|v| *v).collect();
        let b: Vec<f32> = before.params_mut().into_iter().map(|v| *v).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn conv_is_linear_in_input(seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = Conv2d::<f64>::he_uniform(3, 5, false, &mut rng);
        let x = Tensor4::from_fn([2, 3, 4, 4], |_| rng.random_range(-1.0..1.0));
        let y = layer.forward(&x).unwrap();
        let ys = layer.forward(&x.map(|v| alpha * v)).unwrap();
        prop_assert!(ys.max_abs_diff(&y.map(|v| alpha * v)) < 1e-12);
    }
}
