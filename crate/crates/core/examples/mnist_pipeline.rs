//! Full MNIST run: float pretraining, relaxed search, discretization,
//! fine-tuning and the scheme comparison table.
//!
//! Needs the four MNIST IDX files (see `scripts/fetch_datasets.sh`).
//! Run with `cargo run --release --example mnist_pipeline [CONFIG] [DATA_DIR]`.

use mixq::config::Config;
use mixq::pipeline::{load_splits, pretrain, resolve_theta, run_search, uniform_baseline};
use mixq::quant::QuantCandidate;
use mixq::report::{layer_memory, layer_memory_csv, schemes_csv, SchemeRow};

fn main() -> mixq::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/mnist.toml").into());
    let mut cfg = Config::load(path.as_ref())?;
    if let Some(dir) = args.next() {
        cfg.data.dir = Some(dir.into());
    }

    let splits = load_splits(&cfg)?;
    let float = pretrain(&cfg, &splits)?;
    let theta = resolve_theta(&cfg, float.valid.loss);
    let run = run_search(&cfg, &splits, &float.network, theta)?;

    let mut rows = vec![SchemeRow {
        scheme: "float32".into(),
        compression: 1.0,
        accuracy: 100.0 * float.test.accuracy,
    }];
    for c in [QuantCandidate::affine(8), QuantCandidate::binary()] {
        let (a, m) = uniform_baseline(&cfg, &splits, &float.network, c)?;
        rows.push(SchemeRow {
            scheme: c.label(),
            compression: a.compression_rate(),
            accuracy: 100.0 * m.accuracy,
        });
    }
    rows.push(SchemeRow {
        scheme: format!("mixed {}", run.assignment.label()),
        compression: run.assignment.compression_rate(),
        accuracy: 100.0 * run.test.accuracy,
    });
    print!("{}", schemes_csv(&rows));
    print!("{}", layer_memory_csv(&layer_memory(&float.network.specs(), &run.assignment)?));
    Ok(())
}
