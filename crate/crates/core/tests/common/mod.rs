//! Helpers shared by the integration tests: a finite-difference gradient
//! oracle, workspace paths and dataset discovery.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mixq::autodiff::{Graph, Var};
use mixq::config::Config;
use mixq::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small floor so that gradients that are zero up to
/// rounding do not divide by zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Uniform values in `[-1, -margin] ∪ [margin, 1]`, away from kinks at zero.
pub fn away_from_zero(shape: &[usize], margin: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(margin..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

/// Scalar `Σ op(inputs) ⊙ R` for a fixed random projection `R`.
fn project(g: &mut Graph, out: Var, seed: u64) -> Var {
    let shape = g.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.constant(uniform(&shape, &mut rng));
    let prod = g.mul(out, r).expect("same shape");
    g.sum(prod)
}

fn forward<F>(build: &F, inputs: &[Tensor], seed: u64) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars);
    let loss = project(&mut g, out, seed);
    g.value(loss).item().expect("scalar")
}

/// Largest relative error between reverse-mode gradients and central
/// differences over every element of every input.
pub fn gradient_error<F>(build: F, inputs: &[Tensor], seed: u64) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    let loss = project(&mut g, out, seed);
    let grads = g.backward(loss).expect("backward");
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).expect("input gradient").clone();
        for i in 0..input.len() {
            let mut shifted = inputs.to_vec();
            shifted[k].data_mut()[i] = input.data()[i] + FD_STEP;
            let plus = forward(&build, &shifted, seed);
            shifted[k].data_mut()[i] = input.data()[i] - FD_STEP;
            let minus = forward(&build, &shifted, seed);
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    worst
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn config(name: &str) -> Config {
    Config::load(&workspace_root().join("configs").join(name)).expect("committed config")
}

/// Dataset root: `MIXQ_DATA_DIR` or `<workspace>/data`.
pub fn data_root() -> PathBuf {
    std::env::var_os("MIXQ_DATA_DIR").map(PathBuf::from).unwrap_or_else(|| workspace_root().join("data"))
}

/// Returns the dataset directory, or `None` when the files are absent and
/// `MIXQ_ALLOW_MISSING_DATA` is set. Absent data otherwise fails the caller.
pub fn dataset_dir(name: &str, probe: &str) -> Option<PathBuf> {
    let dir = data_root().join(name);
    if dir.join(probe).exists() {
        return Some(dir);
    }
    if std::env::var_os("MIXQ_ALLOW_MISSING_DATA").is_some() {
        eprintln!("{} not found; skipped because MIXQ_ALLOW_MISSING_DATA is set", dir.join(probe).display());
        return None;
    }
    panic!(
        "{} not found; run scripts/fetch_datasets.sh or set MIXQ_DATA_DIR",
        dir.join(probe).display()
    );
}
