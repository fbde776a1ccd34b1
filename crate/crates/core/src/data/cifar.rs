//! CIFAR-10 binary batches: per record one label byte then 3072 pixel bytes
//! (1024 red, 1024 green, 1024 blue, each row-major 32×32).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Returns images `[N, 3, 32, 32]` scaled to `[0, 1]` and their labels.
pub fn parse_cifar10(bytes: &[u8]) -> Result<(Tensor, Vec<usize>)> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Corrupt(format!(
            "CIFAR-10 batch length {} is not a positive multiple of {CIFAR_RECORD}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for record in bytes.chunks_exact(CIFAR_RECORD) {
        if record[0] > 9 {
            return Err(Error::LabelOutOfRange {
                label: record[0] as usize,
                classes: 10,
            });
        }
        labels.push(record[0] as usize);
        pixels.extend(record[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Ok((Tensor::new(vec![n, 3, 32, 32], pixels)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_record_round_trip() {
        let mut blob = Vec::new();
        for (label, seed) in [(3u8, 5usize), (9, 11)] {
            blob.push(label);
            blob.extend((0..3072).map(|i| ((i * seed) % 256) as u8));
        }
        let (images, labels) = parse_cifar10(&blob).unwrap();
        assert_eq!(images.shape(), &[2, 3, 32, 32]);
        assert_eq!(labels, vec![3, 9]);
        let back: Vec<u8> = images.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        let expected: Vec<u8> = blob.chunks(CIFAR_RECORD).flat_map(|r| r[1..].to_vec()).collect();
        assert_eq!(back, expected);
    }

    #[test]
    fn empty_and_ragged_rejected() {
        assert!(parse_cifar10(&[]).is_err());
        assert!(parse_cifar10(&[0u8; CIFAR_RECORD + 1]).is_err());
    }
}
