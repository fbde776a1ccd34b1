//! Dataset parsers on constructed fixtures and, when present, the official files.

mod common;

use mixq::data::idx::encode_idx;
use mixq::data::{parse_cifar10, parse_idx, split_train_valid, Dataset, Normalizer, Split};
use mixq::pipeline::load_splits;
use mixq::{Error, Tensor};

#[test]
fn two_image_idx_round_trip() {
    let pixels: Vec<u8> = (0..2 * 3 * 4).map(|i| (i * 11 % 256) as u8).collect();
    let t = parse_idx(&encode_idx(&[2, 3, 4], &pixels)).unwrap();
    assert_eq!(t.shape(), &[2, 3, 4]);
    for (v, &p) in t.data().iter().zip(&pixels) {
        assert_eq!(*v, p as f64 / 255.0);
        assert_eq!((v * 255.0).round() as u8, p);
    }
    let labels = parse_idx(&encode_idx(&[2], &[7, 0])).unwrap();
    assert_eq!(labels.data(), &[7.0, 0.0]);
}

#[test]
fn idx_header_errors() {
    let mut bad = encode_idx(&[1, 2, 2], &[0, 1, 2, 3]);
    bad[3] = 0x02;
    assert!(matches!(parse_idx(&bad), Err(Error::BadMagic { found: 0x0802, .. })));
    let short = encode_idx(&[2, 2, 2], &[0; 5]);
    assert!(matches!(parse_idx(&short), Err(Error::Truncated { expected: 24, found: 21 })));
    assert!(matches!(parse_idx(&[0, 0]), Err(Error::Truncated { .. })));
}

fn cifar_record(label: u8, seed: usize) -> Vec<u8> {
    let mut r = vec![label];
    r.extend((0..3072).map(|i| ((i * 7 + seed * 13) % 256) as u8));
    r
}

#[test]
fn two_record_cifar_round_trip() {
    let blob = [cifar_record(3, 1), cifar_record(9, 2)].concat();
    let (images, labels) = parse_cifar10(&blob).unwrap();
    assert_eq!(images.shape(), &[2, 3, 32, 32]);
    assert_eq!(labels, vec![3, 9]);
    for (n, seed) in [(0, 1), (1, 2)] {
        for i in 0..3072 {
            let expect = ((i * 7 + seed * 13) % 256) as f64 / 255.0;
            assert_eq!(images.data()[n * 3072 + i], expect);
        }
    }
}

#[test]
fn cifar_length_errors() {
    assert!(parse_cifar10(&[]).is_err());
    assert!(parse_cifar10(&cifar_record(1, 0)[..3072]).is_err());
    assert!(matches!(parse_cifar10(&cifar_record(10, 0)), Err(Error::LabelOutOfRange { label: 10, .. })));
}

/// `n` samples over 10 classes of uneven size; each image is its own index.
fn synthetic_train(n: usize) -> Dataset {
    let labels: Vec<usize> = (0..n).map(|i| (i * i + i / 7) % 10).collect();
    let images = Tensor::from_fn(&[n, 1], |i| i as f64);
    Dataset::new(images, labels, Split::Train, 10).unwrap()
}

#[test]
fn split_sizes_and_determinism() {
    let ds = synthetic_train(60000);
    let (train, valid) = split_train_valid(&ds, 0.1, 3).unwrap();
    assert_eq!((train.len(), valid.len()), (54000, 6000));
    assert_eq!(train.split, Split::Train);
    assert_eq!(valid.split, Split::Valid);
    let (train2, valid2) = split_train_valid(&ds, 0.1, 3).unwrap();
    assert_eq!(train.images, train2.images);
    assert_eq!(valid.labels, valid2.labels);
    let (_, other) = split_train_valid(&ds, 0.1, 4).unwrap();
    assert_ne!(other.images, valid.images);
}

#[test]
fn split_is_disjoint_exhaustive_and_stratified() {
    let ds = synthetic_train(60000);
    let (train, valid) = split_train_valid(&ds, 0.1, 9).unwrap();
    // Images carry their original index, so membership is visible directly.
    let mut seen = vec![0u8; ds.len()];
    for v in train.images.data().iter().chain(valid.images.data()) {
        seen[*v as usize] += 1;
    }
    assert!(seen.iter().all(|&c| c == 1));
    let all = ds.class_counts();
    for (c, &k) in valid.class_counts().iter().enumerate() {
        let exact = 0.1 * all[c] as f64;
        assert!((k as f64 - exact).abs() <= 1.0, "class {c}: {k} vs {exact}");
    }
}

#[test]
fn split_rejects_bad_fraction_and_split_tag() {
    let ds = synthetic_train(100);
    assert!(split_train_valid(&ds, 0.0, 1).is_err());
    assert!(split_train_valid(&ds, 1.0, 1).is_err());
    let test = Dataset::new(Tensor::zeros(&[4, 1]), vec![0, 1, 2, 3], Split::Test, 10).unwrap();
    assert!(split_train_valid(&test, 0.5, 1).is_err());
}

#[test]
fn normalization_uses_train_statistics() {
    let train = Dataset::new(Tensor::new(vec![4, 2], vec![0.0, 10.0, 2.0, 10.0, 4.0, 14.0, 6.0, 14.0]).unwrap(), vec![0; 4], Split::Train, 2).unwrap();
    let mut test = Dataset::new(Tensor::new(vec![1, 2], vec![3.0, 12.0]).unwrap(), vec![1], Split::Test, 2).unwrap();
    let norm = Normalizer::fit(&train).unwrap();
    norm.apply(&mut test);
    // Flat samples form one channel: mean 7.5, population std sqrt(24.75).
    let std = 24.75f64.sqrt();
    assert!((test.images.data()[0] - (3.0 - 7.5) / std).abs() < 1e-12);
    assert!((test.images.data()[1] - (12.0 - 7.5) / std).abs() < 1e-12);
}

#[test]
fn labels_out_of_range_rejected() {
    assert!(Dataset::new(Tensor::zeros(&[2, 1]), vec![0, 10], Split::Train, 10).is_err());
    assert!(Dataset::new(Tensor::zeros(&[2, 1]), vec![0], Split::Train, 10).is_err());
}

#[test]
fn official_mnist_files() {
    let Some(dir) = common::dataset_dir("mnist", "train-images-idx3-ubyte") else {
        return;
    };
    let images = parse_idx(&std::fs::read(dir.join("train-images-idx3-ubyte")).unwrap()).unwrap();
    assert_eq!(images.shape(), &[60000, 28, 28]);
    let mut cfg = common::config("mnist.toml");
    cfg.data.dir = Some(dir);
    let s = load_splits(&cfg).unwrap();
    assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (54000, 6000, 10000));
}

#[test]
fn official_cifar_batch() {
    let Some(dir) = common::dataset_dir("cifar10", "data_batch_1.bin") else {
        return;
    };
    let (images, labels) = parse_cifar10(&std::fs::read(dir.join("data_batch_1.bin")).unwrap()).unwrap();
    assert_eq!(images.shape(), &[10000, 3, 32, 32]);
    assert_eq!(labels.len(), 10000);
}
