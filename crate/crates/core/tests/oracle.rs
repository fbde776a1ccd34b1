//! Exhaustive enumeration on the planted task and small MLPs.

mod common;

use mixq::config::Config;
use mixq::data::planted_task;
use mixq::data::Split;
use mixq::nn::build_mlp;
use mixq::oracle::{compare, exhaustive_search, space_size, OracleConfig};
use mixq::pipeline::{load_splits, pretrain, Pretrained, Splits};
use mixq::quant::QuantCandidate;
use mixq::search::Assignment;
use mixq::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn candidates() -> Vec<QuantCandidate> {
    vec![QuantCandidate::binary(), QuantCandidate::affine(8)]
}

fn planted(seed: u64) -> (Config, Splits, Pretrained) {
    let cfg = Config { seed, ..common::config("planted.toml") };
    let splits = load_splits(&cfg).unwrap();
    let float = pretrain(&cfg, &splits).unwrap();
    (cfg, splits, float)
}

#[test]
fn single_layer_enumerates_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = build_mlp(&[8, 2], &mut rng).unwrap();
    let train = planted_task(200, 8, 1, Split::Train).unwrap();
    let valid = planted_task(100, 8, 2, Split::Valid).unwrap();
    let cfg = OracleConfig { cap: 256, budget: mixq::nn::TrainConfig { epochs: 1, ..Default::default() } };
    let r = exhaustive_search(&net, &candidates(), 10.0, &train, &valid, &cfg, 0).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert_eq!(r.rows[0].assignment.indices(), vec![0]);
    assert_eq!(r.rows[1].assignment.indices(), vec![1]);
}

#[test]
fn overflow_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = build_mlp(&[4, 4, 4, 4, 4, 4, 4, 4, 4, 2], &mut rng).unwrap();
    let train = planted_task(10, 4, 1, Split::Train).unwrap();
    let valid = planted_task(10, 4, 2, Split::Valid).unwrap();
    let err = exhaustive_search(&net, &candidates(), 1.0, &train, &valid, &OracleConfig::default(), 0).unwrap_err();
    assert!(matches!(err, Error::SearchSpaceOverflow { size: 512, cap: 256 }));
    assert_eq!(space_size(9, 2), Some(512));
    assert_eq!(space_size(200, 3), None);
}

#[test]
fn planted_table_shape_and_optimum() {
    let (cfg, splits, float) = planted(0);
    let theta = cfg.search.theta.unwrap();
    let r = exhaustive_search(&float.network, &candidates(), theta, &splits.train, &splits.valid, &cfg.oracle, 0).unwrap();
    assert_eq!(r.rows.len(), 8);
    // All-binary is the smallest assignment; rows are lexicographic.
    let min_bits = r.rows.iter().map(|row| row.bits).min().unwrap();
    assert_eq!(r.rows[0].bits, min_bits);
    assert_eq!(r.rows[0].assignment.indices(), vec![0, 0, 0]);
    // The sensitive first layer is the only one kept at 8 bits.
    let opt = r.optimum_row().expect("a feasible assignment");
    assert_eq!(opt.assignment.indices(), vec![1, 0, 0]);
    for row in &r.rows {
        if row.feasible {
            assert!(row.bits >= opt.bits);
        }
        assert_eq!(row.feasible, row.valid_loss <= theta);
        // Binarizing the first layer makes the task unsolvable.
        if row.assignment.indices()[0] == 0 {
            assert!(!row.feasible, "{} should be infeasible", row.assignment.label());
        }
    }
    let csv = r.to_csv();
    assert_eq!(csv.lines().count(), 9);
    assert!(csv.starts_with("assignment,bits,compression,valid_loss,accuracy,feasible\n"));
}

#[test]
fn rerun_reproduces_table() {
    let (cfg, splits, float) = planted(3);
    let run = || exhaustive_search(&float.network, &candidates(), 0.25, &splits.train, &splits.valid, &cfg.oracle, 3).unwrap();
    assert_eq!(run(), run());
}

#[test]
fn comparison_ratios() {
    let (cfg, splits, float) = planted(1);
    let r = exhaustive_search(&float.network, &candidates(), cfg.search.theta.unwrap(), &splits.train, &splits.valid, &cfg.oracle, 1).unwrap();
    let specs = float.network.specs();
    let opt = r.optimum_row().unwrap().assignment.clone();
    let same = compare(&r, &opt).unwrap();
    assert!(same.feasible);
    assert_eq!(same.size_ratio, Some(1.0));
    let all8 = Assignment::from_indices(&specs, &candidates(), &[1, 1, 1]).unwrap();
    let bigger = compare(&r, &all8).unwrap();
    assert!(bigger.size_ratio.unwrap() > 1.0);
    assert_eq!(bigger.found_bits, all8.total_bits());
    // An assignment over a different candidate set is not comparable.
    let foreign = Assignment::uniform(&specs, QuantCandidate::affine(4));
    assert!(matches!(compare(&r, &foreign), Err(Error::ConfigMismatch(_))));
}

#[test]
fn relaxed_network_rejected() {
    let (cfg, splits, float) = planted(0);
    let relaxed = float.network.relax(&candidates()).unwrap();
    assert!(exhaustive_search(&relaxed, &candidates(), 1.0, &splits.train, &splits.valid, &cfg.oracle, 0).is_err());
}
