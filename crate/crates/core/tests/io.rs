use num_complex::Complex;
use prince_core::io::*;
use prince_core::nn::{Network, NetworkSpec};
use prince_core::slimming::{prune, PruneConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn trained_looking_net(seed: u64) -> Network<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = NetworkSpec::uniform(2, 6, 3, 2);
    spec.conv_bias = true;
    let mut net = Network::new(&spec, &mut rng).unwrap();
    for bn in &mut net.bns {
        for c in 0..bn.channels() {
            bn.gamma[c] = rng.random_range(-1.0..1.0);
            bn.beta[c] = rng.random_range(-1.0..1.0);
            bn.running_var[c] = rng.random_range(0.1..3.0);
        }
    }
    net
}

#[test]
fn model_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let net = trained_looking_net(1);
    let path = dir.path().join("nested/model.prnc");
    save_model(&path, &net).unwrap();
    let back: Network<f32> = load_model(&path).unwrap();
    assert_eq!(back, net);
    let wide: Network<f64> = load_model(&path).unwrap();
    assert_eq!(wide.cast::<f32>(), net);
}

#[test]
fn pruned_model_keeps_uneven_widths() {
    let net = trained_looking_net(2);
    let (pruned, _) = prune(
        &net,
        &PruneConfig {
            ratio: 0.5,
            ..Default::default()
        },
        (2, 2),
    )
    .unwrap();
    let bytes = encode_model(&pruned).unwrap();
    let back: Network<f32> = decode_model(&bytes).unwrap();
    assert_eq!(back.spec(), pruned.spec());
    assert_eq!(back, pruned);
    assert_eq!(encode_model(&back).unwrap(), bytes);
}

#[test]
fn corrupt_containers_are_rejected() {
    let bytes = encode_model(&trained_looking_net(3)).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_model::<f32>(&bad).is_err());
    assert!(decode_model::<f32>(&bytes[..bytes.len() - 3]).is_err());
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(decode_model::<f32>(&trailing).is_err());
    let mut other_kind = Vec::new();
    kind_tag(KIND_DATASET, 1.0).encode(&mut other_kind);
    other_kind.extend_from_slice(&bytes[other_kind.len()..]);
    assert!(decode_model::<f32>(&other_kind).is_err());
    assert!(load_model::<f32>(std::path::Path::new("/nonexistent/model.prnc")).is_err());
}

#[test]
fn record_dims_must_match_payload() {
    assert!(TensorRecord::new(vec![2, 3], TensorData::F64(vec![0.0; 5])).is_err());
    let rec = TensorRecord::new(vec![0], TensorData::F32(vec![])).unwrap();
    let mut buf = Vec::new();
    rec.encode(&mut buf);
    assert_eq!(RecordReader::new(&buf).next_record().unwrap(), rec);
}

proptest! {
    #[test]
    fn records_round_trip(
        dims in prop::collection::vec(1usize..4, 1..4),
        seed in any::<u64>(),
        kind in 0u8..4,
    ) {
        let n: usize = dims.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut real = || rng.random_range(-1e6..1e6);
        let data = match kind {
            0 => TensorData::F32((0..n).map(|_| real() as f32).collect()),
            1 => TensorData::F64((0..n).map(|_| real()).collect()),
            2 => TensorData::C32((0..n).map(|_| Complex::new(real() as f32, real() as f32)).collect()),
            _ => TensorData::C64((0..n).map(|_| Complex::new(real(), real())).collect()),
        };
        let rec = TensorRecord::new(dims, data).unwrap();
        let mut buf = Vec::new();
        rec.encode(&mut buf);
        rec.encode(&mut buf);
        let mut reader = RecordReader::new(&buf);
        prop_assert_eq!(&reader.next_record().unwrap(), &rec);
        prop_assert_eq!(&reader.next_record().unwrap(), &rec);
        prop_assert!(reader.is_done());
    }
}
