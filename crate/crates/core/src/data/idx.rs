//! MNIST IDX format: big-endian magic, one big-endian `u32` per dimension, raw bytes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    let chunk = bytes.get(offset..offset + 4).ok_or(Error::Truncated {
        expected: offset + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
}

/// Parses an IDX image or label file.
///
/// Image files (`0x00000803`) yield `[N, rows, cols]` with pixels mapped to
/// `[0, 1]`; label files (`0x00000801`) yield `[N]` with the raw class values.
pub fn parse_idx(bytes: &[u8]) -> Result<Tensor> {
    let magic = read_u32_be(bytes, 0)?;
    let rank = match magic {
        IDX_IMAGES_MAGIC => 3,
        IDX_LABELS_MAGIC => 1,
        found => {
            return Err(Error::BadMagic {
                found,
                expected: IDX_IMAGES_MAGIC,
            })
        }
    };
    let mut shape = Vec::with_capacity(rank);
    for d in 0..rank {
        shape.push(read_u32_be(bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * rank;
    let count: usize = shape.iter().product();
    let payload = bytes.get(header..header + count).ok_or(Error::Truncated {
        expected: header + count,
        found: bytes.len(),
    })?;
    let data = if magic == IDX_IMAGES_MAGIC {
        payload.iter().map(|&b| b as f64 / 255.0).collect()
    } else {
        payload.iter().map(|&b| b as f64).collect()
    };
    Tensor::new(shape, data)
}

/// Serializes `[N, rows, cols]` pixel bytes or `[N]` labels as IDX.
pub fn encode_idx(shape: &[usize], payload: &[u8]) -> Vec<u8> {
    let magic = if shape.len() == 1 { IDX_LABELS_MAGIC } else { IDX_IMAGES_MAGIC };
    let mut out = magic.to_be_bytes().to_vec();
    for &d in shape {
        out.extend((d as u32).to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}
