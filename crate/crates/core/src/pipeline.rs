//! End-to-end runs: data preparation, float pretraining, search with
//! fine-tuning, uniform baselines, sweeps and the oracle, plus the
//! file-writing commands behind the `mixq` binary.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Config, DatasetKind};
use crate::data::{load_cifar10, load_mnist, planted_task, split_train_valid, Dataset, Normalizer, Split};
use crate::error::{Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::network::Network;
use crate::nn::train::{evaluate, train, Metrics};
use crate::oracle::{compare, exhaustive_search, Comparison, OracleResult};
use crate::quant::QuantCandidate;
use crate::report::{self, CurveRow, RunReport, SchemeRow};
use crate::search::{apply_assignment, discretize, fine_tune, search, Assignment, SearchOutcome};

pub const FLOAT_CHECKPOINT: &str = "float.ckpt";
pub const SEARCHED_CHECKPOINT: &str = "searched.ckpt";

/// Normalized train/valid/test splits.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

/// Loads the configured dataset, holds out the validation split and
/// normalizes every split with training-split statistics.
pub fn load_splits(cfg: &Config) -> Result<Splits> {
    let d = &cfg.data;
    let dir = d.resolved_dir();
    let (full, test) = match d.dataset {
        DatasetKind::Mnist => load_mnist(&dir)?,
        DatasetKind::Cifar10 => load_cifar10(&dir, d.cifar_batches)?,
        DatasetKind::Planted => {
            let n = d.planted_train;
            (
                planted_task(n, d.planted_dim, cfg.seed.wrapping_mul(2).wrapping_add(1), Split::Train)?,
                planted_task(d.planted_test, d.planted_dim, cfg.seed.wrapping_mul(2).wrapping_add(2), Split::Test)?,
            )
        }
    };
    let full = match d.train_limit {
        Some(n) => full.stratified_sample(n, cfg.seed),
        None => full,
    };
    let mut test = match d.test_limit {
        Some(n) => test.stratified_sample(n, cfg.seed),
        None => test,
    };
    let (mut train_set, mut valid) = split_train_valid(&full, d.valid_fraction, cfg.seed)?;
    let norm = Normalizer::fit(&train_set)?;
    norm.apply(&mut train_set);
    norm.apply(&mut valid);
    norm.apply(&mut test);
    log::info!("data: {} train, {} valid, {} test", train_set.len(), valid.len(), test.len());
    Ok(Splits {
        train: train_set,
        valid,
        test,
    })
}

/// A trained float model and its scores.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub network: Network,
    pub history: Vec<f64>,
    pub valid: Metrics,
    pub test: Metrics,
}

pub fn pretrain(cfg: &Config, splits: &Splits) -> Result<Pretrained> {
    let mut network = cfg.model.build(&mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let history = train(&mut network, &splits.train, &cfg.pretrain, cfg.seed)?;
    let valid = evaluate(&network, None, &splits.valid)?;
    let test = evaluate(&network, None, &splits.test)?;
    log::info!("float: valid loss {:.4}, test accuracy {:.4}", valid.loss, test.accuracy);
    Ok(Pretrained {
        network,
        history,
        valid,
        test,
    })
}

/// Result of search, discretization and fine-tuning.
#[derive(Clone, Debug)]
pub struct SearchRun {
    pub theta: f64,
    pub outcome: SearchOutcome,
    pub assignment: Assignment,
    /// Validation metrics right after discretization, before fine-tuning.
    pub discretized_valid: Metrics,
    /// Fine-tuned network.
    pub network: Network,
    pub valid: Metrics,
    pub test: Metrics,
}

/// Loss tolerance in effect: the configured value or the float validation loss.
pub fn resolve_theta(cfg: &Config, float_valid_loss: f64) -> f64 {
    cfg.search.theta.unwrap_or(float_valid_loss)
}

pub fn run_search(cfg: &Config, splits: &Splits, base: &Network, theta: f64) -> Result<SearchRun> {
    run_search_or(cfg, splits, base, theta, |_| Ok(()))
}

/// [`run_search`] that hands the partial trajectory of an aborted search to `on_abort`.
fn run_search_or(
    cfg: &Config,
    splits: &Splits,
    base: &Network,
    theta: f64,
    on_abort: impl FnOnce(&crate::search::SearchState) -> Result<()>,
) -> Result<SearchRun> {
    let outcome = match search(base, &splits.train, &splits.valid, &cfg.search, theta, cfg.seed) {
        Ok(o) => o,
        Err(abort) => {
            log::error!("{abort}");
            on_abort(&abort.state)?;
            return Err(abort.cause);
        }
    };
    let assignment = discretize(&outcome.arch, &outcome.network.specs(), &outcome.candidates)?;
    let mut network = apply_assignment(&outcome.network, &assignment)?;
    let discretized_valid = evaluate(&network, None, &splits.valid)?;
    fine_tune(&mut network, &splits.train, &cfg.finetune, cfg.seed)?;
    let valid = evaluate(&network, None, &splits.valid)?;
    let test = evaluate(&network, None, &splits.test)?;
    log::info!(
        "searched {} ({:.2}x): valid loss {:.4}, test accuracy {:.4}",
        assignment.label(),
        assignment.compression_rate(),
        valid.loss,
        test.accuracy
    );
    Ok(SearchRun {
        theta,
        outcome,
        assignment,
        discretized_valid,
        network,
        valid,
        test,
    })
}

/// Uniform quantization of the float model, fine-tuned with the search's budget.
pub fn uniform_baseline(cfg: &Config, splits: &Splits, base: &Network, candidate: QuantCandidate) -> Result<(Assignment, Metrics)> {
    let assignment = Assignment::uniform(&base.specs(), candidate);
    let mut net = apply_assignment(base, &assignment)?;
    fine_tune(&mut net, &splits.train, &cfg.finetune, cfg.seed)?;
    let test = evaluate(&net, None, &splits.test)?;
    log::info!("uniform {}: test accuracy {:.4}", candidate.label(), test.accuracy);
    Ok((assignment, test))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn load_float(out_dir: &Path) -> Result<Checkpoint> {
    Checkpoint::load(&out_dir.join(FLOAT_CHECKPOINT))
}

/// `train`: float pretraining. Writes `float.ckpt` and `float_metrics.csv`.
pub fn cmd_train(cfg: &Config, out_dir: &Path) -> Result<Pretrained> {
    std::fs::create_dir_all(out_dir)?;
    let splits = load_splits(cfg)?;
    let pre = pretrain(cfg, &splits)?;
    let mut ck = Checkpoint::new(pre.network.clone());
    ck.valid_loss = Some(pre.valid.loss);
    ck.save(&out_dir.join(FLOAT_CHECKPOINT))?;
    let mut csv = String::from("split,loss,accuracy_pct\n");
    for (name, m) in [("valid", pre.valid), ("test", pre.test)] {
        csv.push_str(&format!("{name},{:.6},{:.2}\n", m.loss, 100.0 * m.accuracy));
    }
    write(out_dir, "float_metrics.csv", &csv)?;
    write(out_dir, "config.toml", &cfg.to_toml())?;
    Ok(pre)
}

fn float_baseline(ck: &Checkpoint, splits: &Splits) -> Result<(f64, Metrics)> {
    let valid_loss = match ck.valid_loss {
        Some(v) => v,
        None => evaluate(&ck.network, None, &splits.valid)?.loss,
    };
    Ok((valid_loss, evaluate(&ck.network, None, &splits.test)?))
}

/// `search`: relaxed search from `float.ckpt`, discretization and fine-tuning.
/// Writes the trajectory, assignment, layer-memory and scheme tables plus
/// `searched.ckpt`.
pub fn cmd_search(cfg: &Config, out_dir: &Path) -> Result<RunReport> {
    let ck = load_float(out_dir)?;
    let splits = load_splits(cfg)?;
    let (float_loss, float_test) = float_baseline(&ck, &splits)?;
    let theta = resolve_theta(cfg, float_loss);
    let run = run_search_or(cfg, &splits, &ck.network, theta, |state| {
        write(out_dir, "trajectory.csv", &report::trajectory_csv(state)).map(drop)
    })?;
    write(out_dir, "trajectory.csv", &report::trajectory_csv(&run.outcome.state))?;
    write(out_dir, "assignment.csv", &report::assignment_csv(&run.assignment))?;
    let layers = report::layer_memory(&ck.network.specs(), &run.assignment)?;
    write(out_dir, "layers.csv", &report::layer_memory_csv(&layers))?;

    let mut schemes = vec![SchemeRow {
        scheme: "float32".into(),
        compression: 1.0,
        accuracy: 100.0 * float_test.accuracy,
    }];
    if cfg.report.uniform_baselines {
        for c in [QuantCandidate::affine(8), QuantCandidate::binary()] {
            let (a, m) = uniform_baseline(cfg, &splits, &ck.network, c)?;
            schemes.push(SchemeRow {
                scheme: c.label(),
                compression: a.compression_rate(),
                accuracy: 100.0 * m.accuracy,
            });
        }
    }
    schemes.push(SchemeRow {
        scheme: format!("mixed {}", run.assignment.label()),
        compression: run.assignment.compression_rate(),
        accuracy: 100.0 * run.test.accuracy,
    });
    write(out_dir, "schemes.csv", &report::schemes_csv(&schemes))?;
    let config = cfg.to_toml();
    write(out_dir, "config.toml", &config)?;

    let mut out = Checkpoint::new(run.network.clone());
    out.arch = Some(run.outcome.arch.clone());
    out.assignment = Some(run.assignment.clone());
    out.valid_loss = Some(run.valid.loss);
    out.save(&out_dir.join(SEARCHED_CHECKPOINT))?;
    Ok(RunReport {
        config,
        schemes,
        layers,
        trajectory: "trajectory.csv".into(),
    })
}

/// Searched and reference points of the accuracy/compression curve.
pub fn sweep(cfg: &Config, splits: &Splits, base: &Network, float_test: Metrics, thetas: &[f64]) -> Result<Vec<CurveRow>> {
    if thetas.len() < 2 {
        return Err(Error::Config(format!("sweep needs at least two loss tolerances, got {}", thetas.len())));
    }
    let mut rows = Vec::with_capacity(thetas.len() + 3);
    for &theta in thetas {
        let run = run_search(cfg, splits, base, theta)?;
        rows.push(CurveRow {
            theta: Some(theta),
            label: run.assignment.label(),
            compression: run.assignment.compression_rate(),
            accuracy: 100.0 * run.test.accuracy,
        });
    }
    rows.push(CurveRow {
        theta: None,
        label: "float32".into(),
        compression: Assignment::uniform(&base.specs(), QuantCandidate::float32()).compression_rate(),
        accuracy: 100.0 * float_test.accuracy,
    });
    for c in [QuantCandidate::affine(8), QuantCandidate::binary()] {
        let (a, m) = uniform_baseline(cfg, splits, base, c)?;
        rows.push(CurveRow {
            theta: None,
            label: c.label(),
            compression: a.compression_rate(),
            accuracy: 100.0 * m.accuracy,
        });
    }
    Ok(rows)
}

/// `sweep`: one search per loss tolerance. Writes `curve.csv`.
pub fn cmd_sweep(cfg: &Config, out_dir: &Path, thetas: &[f64]) -> Result<Vec<CurveRow>> {
    let ck = load_float(out_dir)?;
    let splits = load_splits(cfg)?;
    let (_, float_test) = float_baseline(&ck, &splits)?;
    let rows = sweep(cfg, &splits, &ck.network, float_test, thetas)?;
    write(out_dir, "curve.csv", &report::curve_csv(&rows))?;
    Ok(rows)
}

/// `report`: per-layer memory of a checkpoint that carries an assignment.
/// Writes `layers.csv`.
pub fn cmd_report(checkpoint: &Path, out_dir: &Path) -> Result<Vec<report::LayerMemoryRow>> {
    let ck = Checkpoint::load(checkpoint)?;
    let assignment = ck
        .assignment
        .as_ref()
        .ok_or_else(|| Error::Coverage(format!("{} carries no assignment", checkpoint.display())))?;
    let rows = report::layer_memory(&ck.network.specs(), assignment)?;
    std::fs::create_dir_all(out_dir)?;
    write(out_dir, "layers.csv", &report::layer_memory_csv(&rows))?;
    Ok(rows)
}

/// `oracle`: exhaustive enumeration from `float.ckpt`. Writes `oracle.csv`, and
/// `comparison.csv` when `searched.ckpt` is present.
pub fn cmd_oracle(cfg: &Config, out_dir: &Path) -> Result<(OracleResult, Option<Comparison>)> {
    let ck = load_float(out_dir)?;
    let splits = load_splits(cfg)?;
    let (float_loss, _) = float_baseline(&ck, &splits)?;
    let theta = resolve_theta(cfg, float_loss);
    let candidates = cfg.search.candidate_list()?;
    let result = exhaustive_search(&ck.network, &candidates, theta, &splits.train, &splits.valid, &cfg.oracle, cfg.seed)?;
    write(out_dir, "oracle.csv", &result.to_csv())?;
    let searched = out_dir.join(SEARCHED_CHECKPOINT);
    let comparison = match searched.exists() {
        true => {
            let found = Checkpoint::load(&searched)?
                .assignment
                .ok_or_else(|| Error::Coverage(format!("{} carries no assignment", searched.display())))?;
            let c = compare(&result, &found)?;
            let ratio = c.size_ratio.map(|r| format!("{r:.4}")).unwrap_or_default();
            let optimal = c.optimal_bits.map(|b| b.to_string()).unwrap_or_default();
            let csv = format!(
                "found,found_bits,feasible,optimal_bits,size_ratio\n{},{},{},{optimal},{ratio}\n",
                found.label(),
                c.found_bits,
                c.feasible
            );
            write(out_dir, "comparison.csv", &csv)?;
            Some(c)
        }
        false => None,
    };
    Ok((result, comparison))
}
