//! Small VGG network on CIFAR-10 across several seeds: for each seed, the
//! searched mixed model is compared with uniform binary under the same
//! fine-tuning budget.
//!
//! Needs the CIFAR-10 binary batches (see `scripts/fetch_datasets.sh`).
//! Run with `cargo run --release --example cifar_vgg [SEEDS] [DATA_DIR]`,
//! where `SEEDS` is a count (default 1).

use mixq::config::Config;
use mixq::pipeline::{load_splits, pretrain, resolve_theta, run_search, uniform_baseline};
use mixq::quant::QuantCandidate;

fn main() -> mixq::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map(|s| s.parse().expect("seed count")).unwrap_or(1);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/cifar_vgg.toml");
    let mut base = Config::load(path.as_ref())?;
    if let Some(dir) = args.next() {
        base.data.dir = Some(dir.into());
    }

    println!("seed,assignment,compression,mixed_pct,binary_pct,float_pct");
    for seed in 0..seeds {
        let cfg = Config { seed, ..base.clone() };
        let splits = load_splits(&cfg)?;
        let float = pretrain(&cfg, &splits)?;
        let theta = resolve_theta(&cfg, float.valid.loss);
        let run = run_search(&cfg, &splits, &float.network, theta)?;
        let (_, binary) = uniform_baseline(&cfg, &splits, &float.network, QuantCandidate::binary())?;
        println!(
            "{seed},{},{:.2},{:.2},{:.2},{:.2}",
            run.assignment.label(),
            run.assignment.compression_rate(),
            100.0 * run.test.accuracy,
            100.0 * binary.accuracy,
            100.0 * float.test.accuracy
        );
    }
    Ok(())
}
