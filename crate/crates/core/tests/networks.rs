//! Model zoo contracts and checkpoint files.

use mixq::autodiff::Graph;
use mixq::nn::{build_mlp, build_mnist_dwsep, build_vgg_small, Checkpoint, LayerKind, Network};
use mixq::quant::QuantCandidate;
use mixq::search::{discretize, ArchLogits};
use mixq::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(21)
}

fn output_shape(net: &Network, batch: usize) -> Vec<usize> {
    let mut shape = vec![batch];
    shape.extend(&net.input_shape);
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&shape, 0.1));
    let b = net.bind(&mut g, false, None, false).unwrap();
    let (y, _) = net.forward(&mut g, x, &b, false).unwrap();
    g.value(y).shape().to_vec()
}

#[test]
fn mnist_network_contract() {
    let net = build_mnist_dwsep(&mut rng()).unwrap();
    assert_eq!(output_shape(&net, 32), vec![32, 10]);
    let specs = net.specs();
    assert!(specs.iter().filter(|s| s.quantizable).count() >= 4);
    assert_eq!(specs.iter().filter(|s| matches!(s.kind, LayerKind::DepthwiseConv { .. })).count(), 2);
    // Pointwise convolutions are 1×1 standard convolutions.
    assert_eq!(specs.iter().filter(|s| matches!(s.kind, LayerKind::Conv { .. }) && s.weight_shape[2..] == [1, 1]).count(), 2);
}

#[test]
fn vgg_network_contract() {
    let mut r = rng();
    for depth in [4, 6, 8] {
        let net = build_vgg_small(depth, &mut r).unwrap();
        assert_eq!(output_shape(&net, 16), vec![16, 10]);
        let specs = net.specs();
        assert_eq!(specs.iter().filter(|s| matches!(s.kind, LayerKind::Conv { .. })).count(), depth);
        assert_eq!(specs.iter().filter(|s| s.kind == LayerKind::Dense).count(), 1);
        assert!(specs.iter().all(|s| s.quantizable));
    }
    assert!(matches!(build_vgg_small(5, &mut r), Err(Error::Config(_))));
}

#[test]
fn vgg_parameter_audit() {
    let net = build_vgg_small(4, &mut rng()).unwrap();
    // 3→16, 16→16, pool, 16→32, 32→32, pool, dense 32·8·8 → 10.
    let hand = 16 * 3 * 9 + 16 * 16 * 9 + 32 * 16 * 9 + 32 * 32 * 9 + 10 * 32 * 8 * 8;
    assert_eq!(net.param_counts().iter().sum::<usize>(), hand);
}

#[test]
fn float_payload_and_weight_count() {
    for net in [build_mnist_dwsep(&mut rng()).unwrap(), build_vgg_small(6, &mut rng()).unwrap()] {
        let specs = net.specs();
        let counted: usize = net.layers.iter().map(|l| l.weight.len()).sum();
        let from_shapes: usize = specs.iter().map(|s| s.weight_shape.iter().product::<usize>()).sum();
        assert_eq!(counted, from_shapes);
        let norm_params: usize = net.layers.iter().flat_map(|l| &l.norms).map(|n| n.gamma.len() + n.beta.len()).sum();
        assert_eq!(net.trainable_count(), counted + norm_params);
        let a = mixq::search::Assignment::uniform(&specs, QuantCandidate::float32());
        assert_eq!(a.total_bits(), 32 * counted as u64);
    }
}

#[test]
fn forward_is_deterministic() {
    let net = build_mnist_dwsep(&mut rng()).unwrap();
    let run = || {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[4, 1, 28, 28], |i| ((i * 37) % 101) as f64 / 101.0));
        let b = net.bind(&mut g, false, None, false).unwrap();
        let (y, _) = net.forward(&mut g, x, &b, true).unwrap();
        g.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

fn tensor_bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn assert_bit_identical(a: &Network, b: &Network) {
    assert_eq!(a.layers.len(), b.layers.len());
    for (x, y) in a.layers.iter().zip(&b.layers) {
        assert_eq!(tensor_bits(&x.weight), tensor_bits(&y.weight));
        for (p, q) in x.norms.iter().zip(&y.norms) {
            assert_eq!(tensor_bits(&p.gamma), tensor_bits(&q.gamma));
            assert_eq!(tensor_bits(&p.beta), tensor_bits(&q.beta));
            assert_eq!(p.running_mean.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), q.running_mean.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            assert_eq!(p.running_var.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), q.running_var.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}

#[test]
fn file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fresh.ckpt");
    let net = build_vgg_small(4, &mut rng()).unwrap();
    let mut ck = Checkpoint::new(net);
    ck.valid_loss = Some(0.123456789);
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_bit_identical(&ck.network, &back.network);
    assert_eq!(back, ck);
}

#[test]
fn logits_and_assignment_restored() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("relaxed.ckpt");
    let c = [QuantCandidate::binary(), QuantCandidate::affine(8)];
    let net = build_mlp(&[8, 1, 16, 2], &mut rng()).unwrap().relax(&c).unwrap();
    let arch = ArchLogits::from_rows(vec![vec![0.1 / 3.0, -2.5], vec![1e-300, -0.0], vec![7.0, 7.0]]).unwrap();
    let mut ck = Checkpoint::new(net);
    ck.assignment = Some(discretize(&arch, &ck.network.specs(), &c).unwrap());
    ck.arch = Some(arch.clone());
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let rows_bits = |a: &ArchLogits| a.rows().iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(rows_bits(back.arch.as_ref().unwrap()), rows_bits(&arch));
    assert_eq!(back.assignment, ck.assignment);
    assert_bit_identical(&ck.network, &back.network);
}

#[test]
fn truncated_file_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.ckpt");
    let bytes = Checkpoint::new(build_mnist_dwsep(&mut rng()).unwrap()).to_bytes();
    for cut in [3, 12, bytes.len() / 2, bytes.len() - 1] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Corrupt(_))), "cut at {cut}");
    }
}

#[test]
fn flipped_byte_is_corrupt() {
    let mut bytes = Checkpoint::new(build_mnist_dwsep(&mut rng()).unwrap()).to_bytes();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Corrupt(_))));
}

#[test]
fn other_version_rejected() {
    let mut bytes = Checkpoint::new(build_mlp(&[2, 2], &mut rng()).unwrap()).to_bytes();
    bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::VersionMismatch { found: 2, expected: 1 })));
}

#[test]
fn missing_file_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(Checkpoint::load(&dir.path().join("absent.ckpt")), Err(Error::MissingData(_))));
}
