//! Command-line driver: `mixq [--config FILE] [--seed N] [--data-dir DIR] [--out-dir DIR] <command>`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mixq::config::Config;
use mixq::pipeline;

#[derive(Parser)]
#[command(name = "mixq", version, about = "Differentiable mixed-precision quantization search")]
struct Cli {
    /// TOML configuration file (defaults are used when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the dataset directory.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Directory for checkpoints and reports.
    #[arg(long, global = true, default_value = "runs/default")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the full-precision model and save `float.ckpt`.
    Train,
    /// Search a mixed-precision assignment from `float.ckpt` and fine-tune it.
    Search,
    /// Run one search per loss tolerance and write the trade-off curve.
    Sweep {
        /// Loss tolerances (at least two); defaults to `report.sweep_thetas`.
        #[arg(long, value_delimiter = ',')]
        theta: Vec<f64>,
    },
    /// Per-layer memory report for a checkpoint carrying an assignment.
    Report {
        /// Defaults to `<out-dir>/searched.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Exhaustively enumerate assignments of a small model.
    Oracle,
}

fn run(cli: Cli) -> mixq::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = cli.data_dir {
        cfg.data.dir = Some(dir);
    }
    let out = cli.out_dir.as_path();
    match cli.command {
        Command::Train => {
            let pre = pipeline::cmd_train(&cfg, out)?;
            println!("float model: test accuracy {:.2}%, valid loss {:.4}", 100.0 * pre.test.accuracy, pre.valid.loss);
        }
        Command::Search => {
            let report = pipeline::cmd_search(&cfg, out)?;
            for row in &report.schemes {
                println!("{:<24} {:>8.2}x {:>7.2}%", row.scheme, row.compression, row.accuracy);
            }
        }
        Command::Sweep { theta } => {
            let thetas = if theta.is_empty() { cfg.report.sweep_thetas.clone() } else { theta };
            for row in pipeline::cmd_sweep(&cfg, out, &thetas)? {
                println!("{:<12} {:>8.2}x {:>7.2}%", row.label, row.compression, row.accuracy);
            }
        }
        Command::Report { checkpoint } => {
            let path = checkpoint.unwrap_or_else(|| out.join(pipeline::SEARCHED_CHECKPOINT));
            let rows = pipeline::cmd_report(&path, out)?;
            println!("{} layers written to {}", rows.len(), out.join("layers.csv").display());
        }
        Command::Oracle => {
            let (result, comparison) = pipeline::cmd_oracle(&cfg, out)?;
            match result.optimum_row() {
                Some(r) => println!("oracle optimum {} ({} bits, {:.2}x)", r.assignment.label(), r.bits, r.compression),
                None => println!("no assignment meets the loss tolerance {:.4}", result.theta),
            }
            if let Some(c) = comparison {
                println!("searched assignment: feasible {}, size ratio {:?}", c.feasible, c.size_ratio);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
