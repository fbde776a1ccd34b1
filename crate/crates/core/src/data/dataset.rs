use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{cifar::parse_cifar10, idx::parse_idx};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Images (`[N, ...]`) with class labels, tagged with the split they belong to.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub split: Split,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, split: Split, classes: usize) -> Result<Self> {
        if images.shape().first() != Some(&labels.len()) {
            return Err(Error::Shape {
                op: "Dataset::new",
                lhs: images.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            images,
            labels,
            split,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    /// Copies the given samples into a batch tensor.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * len..(i + 1) * len]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::new(shape, data).expect("gathered shape"), labels)
    }

    pub fn subset(&self, indices: &[usize], split: Split) -> Dataset {
        let (images, labels) = self.gather(indices);
        Dataset {
            images,
            labels,
            split,
            classes: self.classes,
        }
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Fails unless the dataset carries the expected split tag.
    pub fn expect_split(&self, split: Split) -> Result<()> {
        if self.split != split {
            return Err(Error::InvalidArgument {
                op: "split guard",
                reason: format!("expected {split:?} data, got {:?}", self.split),
            });
        }
        Ok(())
    }

    /// Stratified random subset of `n` samples (same split tag).
    pub fn stratified_sample(&self, n: usize, seed: u64) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        let fraction = n as f64 / self.len() as f64;
        let (picked, _) = stratified_partition(&self.labels, self.classes, fraction, seed);
        self.subset(&picked, self.split)
    }
}

/// Per-channel mean and standard deviation of a training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Statistics over axis 1 (channels) of `[N, C, ...]` data, or a single
    /// channel for `[N, D]` feature vectors.
    pub fn fit(train: &Dataset) -> Result<Self> {
        train.expect_split(Split::Train)?;
        let (channels, inner) = channel_layout(&train.images);
        let n = train.len();
        let mut mean = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        for b in 0..n {
            for c in 0..channels {
                let off = (b * channels + c) * inner;
                for &v in &train.images.data()[off..off + inner] {
                    mean[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let count = (n * inner) as f64;
        let std = mean
            .iter_mut()
            .zip(&sq)
            .map(|(m, s)| {
                *m /= count;
                (s / count - *m * *m).max(1e-12).sqrt()
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, ds: &mut Dataset) {
        let (channels, inner) = channel_layout(&ds.images);
        debug_assert_eq!(channels, self.mean.len());
        for (i, v) in ds.images.data_mut().iter_mut().enumerate() {
            let c = (i / inner) % channels;
            *v = (*v - self.mean[c]) / self.std[c];
        }
    }
}

fn channel_layout(images: &Tensor) -> (usize, usize) {
    match images.shape() {
        [_, c, rest @ ..] if !rest.is_empty() => (*c, rest.iter().product()),
        [_, d] => (1, *d),
        _ => (1, 1),
    }
}

/// Splits indices into (rest, picked) with `round(fraction·N)` picked, apportioned
/// across classes by largest remainder so every class is within one of exact.
fn stratified_partition(labels: &[usize], classes: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let target = (fraction * labels.len() as f64).round() as usize;
    let exact: Vec<f64> = by_class.iter().map(|v| fraction * v.len() as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..classes).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut remaining = target.saturating_sub(quota.iter().sum());
    for &c in order.iter().cycle().take(classes * 2) {
        if remaining == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            remaining -= 1;
        }
    }
    let mut picked = Vec::with_capacity(target);
    let mut rest = Vec::with_capacity(labels.len() - target);
    for (c, idx) in by_class.iter_mut().enumerate() {
        idx.shuffle(&mut rng);
        picked.extend_from_slice(&idx[..quota[c]]);
        rest.extend_from_slice(&idx[quota[c]..]);
    }
    picked.sort_unstable();
    rest.sort_unstable();
    (picked, rest)
}

/// Stratified, seeded split of a training set into (train, valid).
pub fn split_train_valid(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument {
            op: "split_train_valid",
            reason: format!("fraction must lie in (0, 1), got {fraction}"),
        });
    }
    dataset.expect_split(Split::Train)?;
    let (valid_idx, train_idx) = stratified_partition(&dataset.labels, dataset.classes, fraction, seed);
    Ok((dataset.subset(&train_idx, Split::Train), dataset.subset(&valid_idx, Split::Valid)))
}

/// Shuffled mini-batch index lists; the last partial batch is kept.
pub fn shuffled_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// In-order batches for evaluation.
pub fn sequential_batches(n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    (0..n).collect::<Vec<_>>().chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Random crop from a zero-padded image plus random horizontal flip, per sample.
pub fn augment_crop_flip<R: Rng + ?Sized>(batch: &Tensor, pad: usize, rng: &mut R) -> Tensor {
    let [n, c, h, w] = match *batch.shape() {
        [n, c, h, w] => [n, c, h, w],
        _ => return batch.clone(),
    };
    let mut out = vec![0.0; batch.len()];
    let src = batch.data();
    let pad = pad as i64;
    for b in 0..n {
        let dy = rng.random_range(-pad..=pad);
        let dx = rng.random_range(-pad..=pad);
        let flip = rng.random_bool(0.5);
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            for y in 0..h {
                let sy = y as i64 + dy;
                if sy < 0 || sy >= h as i64 {
                    continue;
                }
                for x in 0..w {
                    let xx = if flip { w - 1 - x } else { x };
                    let sx = xx as i64 + dx;
                    if sx >= 0 && sx < w as i64 {
                        out[base + y * w + x] = src[base + sy as usize * w + sx as usize];
                    }
                }
            }
        }
    }
    Tensor::new(batch.shape().to_vec(), out).expect("same shape")
}

fn read(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingData(path.to_path_buf()));
    }
    Ok(std::fs::read(path)?)
}

fn idx_pair(dir: &Path, prefix: &str, split: Split) -> Result<Dataset> {
    let images = parse_idx(&read(&dir.join(format!("{prefix}-images-idx3-ubyte")))?)?;
    let labels = parse_idx(&read(&dir.join(format!("{prefix}-labels-idx1-ubyte")))?)?;
    let [n, h, w] = match *images.shape() {
        [n, h, w] => [n, h, w],
        _ => return Err(Error::Corrupt("MNIST images must be rank 3".into())),
    };
    let images = images.reshape(&[n, 1, h, w])?;
    let labels = labels.data().iter().map(|&v| v as usize).collect();
    Dataset::new(images, labels, split, 10)
}

/// Loads `train-*` and `t10k-*` IDX files from `dir`.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    Ok((idx_pair(dir, "train", Split::Train)?, idx_pair(dir, "t10k", Split::Test)?))
}

/// Loads `data_batch_{1..=batches}.bin` and `test_batch.bin` from `dir`.
pub fn load_cifar10(dir: &Path, batches: usize) -> Result<(Dataset, Dataset)> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 1..=batches.clamp(1, 5) {
        let (im, lb) = parse_cifar10(&read(&dir.join(format!("data_batch_{i}.bin")))?)?;
        images.extend(im.into_data());
        labels.extend(lb);
    }
    let n = labels.len();
    let train = Dataset::new(Tensor::new(vec![n, 3, 32, 32], images)?, labels, Split::Train, 10)?;
    let (im, lb) = parse_cifar10(&read(&dir.join("test_batch.bin"))?)?;
    Ok((train, Dataset::new(im, lb, Split::Test, 10)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(n: usize, classes: usize) -> Dataset {
        let labels: Vec<usize> = (0..n).map(|i| (i * 7 + i / 3) % classes).collect();
        Dataset::new(Tensor::from_fn(&[n, 2], |i| i as f64), labels, Split::Train, classes).unwrap()
    }

    #[test]
    fn split_sizes() {
        let ds = Dataset::new(Tensor::zeros(&[60000, 1]), (0..60000).map(|i| i % 10).collect(), Split::Train, 10).unwrap();
        let (tr, va) = split_train_valid(&ds, 0.1, 3).unwrap();
        assert_eq!((tr.len(), va.len()), (54000, 6000));
        assert_eq!(va.split, Split::Valid);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let ds = labelled(1003, 7);
        let (a_tr, a_va) = split_train_valid(&ds, 0.13, 42).unwrap();
        let (b_tr, b_va) = split_train_valid(&ds, 0.13, 42).unwrap();
        assert_eq!(a_tr.images, b_tr.images);
        assert_eq!(a_va.labels, b_va.labels);
        assert_eq!(a_tr.len() + a_va.len(), ds.len());
        let mut all: Vec<f64> = a_tr.images.data().iter().chain(a_va.images.data()).copied().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.dedup();
        assert_eq!(all.len(), ds.images.len());
    }

    #[test]
    fn split_is_stratified_within_one() {
        let ds = labelled(997, 10);
        let (_, va) = split_train_valid(&ds, 0.1, 9).unwrap();
        for (c, (&got, &total)) in va.class_counts().iter().zip(&ds.class_counts()).enumerate() {
            let exact = 0.1 * total as f64;
            assert!((got as f64 - exact).abs() <= 1.0, "class {c}: {got} vs {exact}");
        }
    }

    #[test]
    fn invalid_fraction_and_split_tag() {
        let ds = labelled(10, 2);
        assert!(split_train_valid(&ds, 0.0, 0).is_err());
        assert!(split_train_valid(&ds, 1.0, 0).is_err());
        let test = Dataset { split: Split::Test, ..ds };
        assert!(split_train_valid(&test, 0.5, 0).is_err());
    }

    #[test]
    fn normalizer_uses_train_statistics() {
        let ds = Dataset::new(Tensor::from_fn(&[4, 2, 1, 1], |i| i as f64), vec![0, 1, 0, 1], Split::Train, 2).unwrap();
        let norm = Normalizer::fit(&ds).unwrap();
        assert_eq!(norm.mean, vec![3.0, 4.0]);
        let mut copy = ds.clone();
        norm.apply(&mut copy);
        let ch0: Vec<f64> = (0..4).map(|b| copy.images.data()[b * 2]).collect();
        assert!(ch0.iter().sum::<f64>().abs() < 1e-12);
        let valid = Dataset { split: Split::Valid, ..ds };
        assert!(Normalizer::fit(&valid).is_err());
    }

    #[test]
    fn batches_keep_last_partial() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = shuffled_batches(10, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn missing_files_report_path() {
        let err = load_mnist(Path::new("/nonexistent-dir")).unwrap_err();
        assert!(matches!(err, Error::MissingData(_)));
    }
}
