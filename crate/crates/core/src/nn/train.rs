//! Mini-batch training and evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{augment_crop_flip, sequential_batches, shuffled_batches, Dataset};
use crate::error::{Error, Result};
use crate::nn::network::Network;
use crate::nn::optim::{cosine_lr, Sgd};
use crate::search::ArchLogits;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Random crop (pad 4) and horizontal flip on image batches.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            augment: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// One SGD step on the network weights and batch-norm affine parameters.
///
/// Architecture logits, if any, are read but never updated. Batch-norm running
/// statistics are refreshed and binary-candidate weights are clipped afterwards.
pub fn weight_step(net: &mut Network, arch: Option<&ArchLogits>, images: Tensor, labels: &[usize], sgd: &mut Sgd, lr: f64) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(images);
    let bind = net.bind(&mut g, true, arch, false)?;
    let (logits, updates) = net.forward(&mut g, x, &bind, true)?;
    let loss = g.softmax_cross_entropy(logits, labels)?;
    let value = g.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            value,
            context: "training loss".into(),
        });
    }
    let mut grads = g.backward(loss)?;
    let owned: Vec<Tensor> = bind.params().into_iter().map(|v| grads.take(v).expect("parameter gradient")).collect();
    let refs: Vec<&Tensor> = owned.iter().collect();
    sgd.step(net.params_mut(), &refs, lr);
    net.apply_norm_updates(&updates);
    net.clip_weights();
    Ok(value)
}

/// Loss and accuracy in evaluation mode (running batch-norm statistics).
pub fn evaluate(net: &Network, arch: Option<&ArchLogits>, data: &Dataset) -> Result<Metrics> {
    let mut total = 0.0;
    let mut correct = 0usize;
    for idx in sequential_batches(data.len(), 500) {
        let (images, labels) = data.gather(&idx);
        let mut g = Graph::new();
        let x = g.constant(images);
        let bind = net.bind(&mut g, false, arch, false)?;
        let (logits, _) = net.forward(&mut g, x, &bind, false)?;
        let loss = g.softmax_cross_entropy(logits, &labels)?;
        total += g.value(loss).item()? * labels.len() as f64;
        let z = g.value(logits);
        let classes = z.shape()[1];
        for (row, &label) in z.data().chunks(classes).zip(&labels) {
            let pred = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0;
            correct += usize::from(pred == label);
        }
    }
    let n = data.len().max(1) as f64;
    Ok(Metrics {
        loss: total / n,
        accuracy: correct as f64 / n,
    })
}

/// Trains for `cfg.epochs` epochs with cosine-decayed SGD; returns mean loss per epoch.
pub fn train(net: &mut Network, data: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sgd = Sgd::new(cfg.momentum);
    let per_epoch = data.len().div_ceil(cfg.batch_size.max(1));
    let total = per_epoch * cfg.epochs;
    let mut step = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let batches = shuffled_batches(data.len(), cfg.batch_size, &mut rng);
        let count = batches.len();
        for idx in batches {
            let (mut images, labels) = data.gather(&idx);
            if cfg.augment {
                images = augment_crop_flip(&images, 4, &mut rng);
            }
            let lr = cosine_lr(cfg.lr, step, total);
            sum += weight_step(net, None, images, &labels, &mut sgd, lr)?;
            step += 1;
        }
        let mean = sum / count.max(1) as f64;
        log::info!("{} epoch {}/{}: train loss {mean:.4}", net.name, epoch + 1, cfg.epochs);
        history.push(mean);
    }
    Ok(history)
}
