//! Differentiable search against the exhaustive oracle on the planted toy task.
//!
//! The task's first layer has to represent a direction with weights
//! `1, 1/2, 1/4, …`, which a binarized layer cannot, while the other layers
//! only route a one-dimensional signal. The expected result is 8-bit on the
//! first layer and binary elsewhere.
//!
//! Run with `cargo run --release --example planted_search [CONFIG] [SEEDS]`.

use mixq::config::Config;
use mixq::oracle::{compare, exhaustive_search};
use mixq::pipeline::{load_splits, pretrain, resolve_theta, run_search};

fn main() -> mixq::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/planted.toml").into());
    let seeds: u64 = args.next().map_or(5, |s| s.parse().expect("seed count"));
    let base_cfg = Config::load(path.as_ref())?;
    for seed in 0..seeds {
        let cfg = Config { seed, ..base_cfg.clone() };
        let splits = load_splits(&cfg)?;
        let float = pretrain(&cfg, &splits)?;
        let theta = resolve_theta(&cfg, float.valid.loss);
        let candidates = cfg.search.candidate_list()?;
        let oracle = exhaustive_search(&float.network, &candidates, theta, &splits.train, &splits.valid, &cfg.oracle, seed)?;
        let run = run_search(&cfg, &splits, &float.network, theta)?;
        let cmp = compare(&oracle, &run.assignment)?;
        let optimum = oracle.optimum_row().map_or("none".to_string(), |r| r.assignment.label());
        println!(
            "seed {seed}: float acc {:.3}, oracle optimum {optimum}, searched {} (feasible {}, size ratio {:?}), {} iterations",
            float.test.accuracy,
            run.assignment.label(),
            cmp.feasible,
            cmp.size_ratio,
            run.outcome.state.iterations
        );
    }
    Ok(())
}
