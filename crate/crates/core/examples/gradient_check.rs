//! Compares reverse-mode gradients of a small conv/batch-norm/dense graph with
//! central finite differences.
//!
//! Run with `cargo run --example gradient_check`.

use mixq::autodiff::{BnMode, ConvGeom, Graph, PoolGeom};
use mixq::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Loss of a tiny CNN as a function of its conv kernel.
fn loss(x: &Tensor, kernel: &Tensor, dense: &Tensor, labels: &[usize]) -> mixq::Result<(f64, Tensor)> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let k = g.param(kernel.clone());
    let d = g.constant(dense.clone());
    let gamma = g.constant(Tensor::ones(&[3]));
    let beta = g.constant(Tensor::zeros(&[3]));
    let h = g.conv2d(xv, k, ConvGeom::new(1, 1))?;
    let (h, _) = g.batch_norm(h, gamma, beta, 1e-5, BnMode::Train)?;
    let h = g.relu(h);
    let h = g.max_pool2d(h, PoolGeom::new(2, 2))?;
    let h = g.flatten(h)?;
    let logits = g.dense(h, d)?;
    let l = g.softmax_cross_entropy(logits, labels)?;
    let value = g.value(l).item()?;
    let grads = g.backward(l)?;
    Ok((value, grads.get(k).expect("kernel gradient").clone()))
}

fn main() -> mixq::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&[4, 2, 6, 6], &mut rng);
    let kernel = random(&[3, 2, 3, 3], &mut rng);
    let dense = random(&[5, 27], &mut rng);
    let labels = [0, 3, 1, 4];
    let (_, analytic) = loss(&x, &kernel, &dense, &labels)?;

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..kernel.len() {
        let mut plus = kernel.clone();
        plus.data_mut()[i] += h;
        let mut minus = kernel.clone();
        minus.data_mut()[i] -= h;
        let numeric = (loss(&x, &plus, &dense, &labels)?.0 - loss(&x, &minus, &dense, &labels)?.0) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    println!("{} kernel entries checked, worst relative error {worst:.2e}", kernel.len());
    Ok(())
}
