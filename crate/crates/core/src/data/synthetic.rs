//! Planted-sensitivity task for exercising the search on tiny networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::dataset::{Dataset, Split};
use crate::error::Result;
use crate::tensor::Tensor;

/// Weights `2^-k` of the planted decision direction.
pub fn planted_direction(dim: usize) -> Vec<f64> {
    (0..dim).map(|k| 0.5f64.powi(k as i32)).collect()
}

/// Binary task `y = [Σ_k 2^-k x_k > 0]` with `x ~ U[-1, 1]^dim`.
///
/// The first layer of a network must align with a direction whose weights
/// span a 2^dim dynamic range. A single sign pattern reaches a cosine of
/// only about 0.6 with it, so a binarized first layer of width one cannot
/// solve the task while an 8-bit one can. Later layers only route a
/// one-dimensional signal and are insensitive to binarization.
pub fn planted_task(n: usize, dim: usize, seed: u64, split: Split) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = planted_direction(dim);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let score: f64 = x.iter().zip(&dir).map(|(a, b)| a * b).sum();
        labels.push(usize::from(score > 0.0));
        data.extend(x);
    }
    Dataset::new(Tensor::new(vec![n, dim], data)?, labels, split, 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roughly_balanced_and_deterministic() {
        let a = planted_task(2000, 8, 1, Split::Train).unwrap();
        let b = planted_task(2000, 8, 1, Split::Train).unwrap();
        assert_eq!(a.labels, b.labels);
        let ones = a.labels.iter().sum::<usize>();
        assert!((800..1200).contains(&ones));
    }

    #[test]
    fn sign_pattern_cannot_align() {
        let dir = planted_direction(8);
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let best_sign = dir.iter().sum::<f64>() / (norm * (8f64).sqrt());
        assert!(best_sign < 0.65);
    }
}
