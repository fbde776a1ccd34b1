//! Fake-quantization operators and weight payload accounting.
//!
//! Every quantizer maps a full-precision weight tensor to values on its
//! grid. Gradients pass straight through, masked to zero where `|w|`
//! exceeds the candidate's clip range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bit width of an unquantized weight.
pub const FLOAT_BITS: u32 = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantKind {
    /// `s · sign(w)` with a per-tensor scale `s = mean|w|`.
    BinaryWithScale,
    /// Symmetric per-tensor grid with `2^bits − 1` levels centred at zero.
    AffineSymmetric,
    /// Full-precision reference (no quantization).
    Float,
}

/// One quantization option for a layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantCandidate {
    pub bits: u32,
    pub kind: QuantKind,
    /// STE pass-through range. `None` means `max|w|`, i.e. nothing is masked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<f64>,
}

impl QuantCandidate {
    pub fn binary() -> Self {
        Self {
            bits: 1,
            kind: QuantKind::BinaryWithScale,
            clip: Some(1.0),
        }
    }

    pub fn affine(bits: u32) -> Self {
        Self {
            bits,
            kind: QuantKind::AffineSymmetric,
            clip: None,
        }
    }

    pub fn float32() -> Self {
        Self {
            bits: FLOAT_BITS,
            kind: QuantKind::Float,
            clip: None,
        }
    }

    /// Builds the candidate for a bit width: 1 is binary, 32 is float, the rest affine.
    pub fn from_bits(bits: u32) -> Result<Self> {
        let c = match bits {
            1 => Self::binary(),
            FLOAT_BITS => Self::float32(),
            _ => Self::affine(bits),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidArgument { op: "QuantCandidate", reason });
        match self.kind {
            QuantKind::BinaryWithScale if self.bits != 1 => bad(format!("binary candidate with {} bits", self.bits)),
            QuantKind::AffineSymmetric if !(2..=FLOAT_BITS).contains(&self.bits) => {
                bad(format!("affine bits must lie in [2, 32], got {}", self.bits))
            }
            QuantKind::Float if self.bits != FLOAT_BITS => bad(format!("float candidate with {} bits", self.bits)),
            _ if self.clip.is_some_and(|c| !(c > 0.0)) => bad(format!("clip must be positive, got {:?}", self.clip)),
            _ => Ok(()),
        }
    }

    pub fn is_binary(&self) -> bool {
        self.kind == QuantKind::BinaryWithScale
    }

    /// Forward quantization of a weight tensor.
    pub fn quantize(&self, w: &Tensor) -> Tensor {
        match self.kind {
            QuantKind::BinaryWithScale => quantize_binary(w),
            QuantKind::AffineSymmetric => quantize_affine(w, self.bits),
            QuantKind::Float => w.clone(),
        }
    }

    /// The STE clip value in effect for `w`.
    pub fn effective_clip(&self, w: &Tensor) -> f64 {
        match (self.kind, self.clip) {
            (QuantKind::Float, _) => f64::INFINITY,
            (_, Some(c)) => c,
            (_, None) => w.max_abs(),
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            QuantKind::BinaryWithScale => "binary".to_string(),
            QuantKind::AffineSymmetric => format!("{}-bit", self.bits),
            QuantKind::Float => "float32".to_string(),
        }
    }
}

/// `s · sign(w)` with `s = mean|w|` and `sign(0) = +1`.
pub fn quantize_binary(w: &Tensor) -> Tensor {
    let data = w.data();
    if data.is_empty() {
        return w.clone();
    }
    let first = data[0].abs();
    let scale = if data.iter().all(|v| v.abs() == first) {
        first
    } else {
        data.iter().map(|v| v.abs()).sum::<f64>() / data.len() as f64
    };
    let out = data.iter().map(|&v| if v >= 0.0 { scale } else { -scale }).collect();
    Tensor::new(w.shape().to_vec(), out).expect("same shape")
}

/// Grid step of the symmetric `bits`-wide quantizer for `w`.
pub fn affine_scale(w: &Tensor, bits: u32) -> f64 {
    let levels = ((1u64 << (bits - 1)) - 1) as f64;
    w.max_abs() / levels
}

/// `round(w / scale) · scale` with `scale = max|w| / (2^(bits−1) − 1)`,
/// rounding half away from zero.
pub fn quantize_affine(w: &Tensor, bits: u32) -> Tensor {
    let scale = affine_scale(w, bits);
    if scale == 0.0 || !scale.is_finite() {
        return Tensor::zeros(w.shape());
    }
    // Adding +0.0 turns a rounded -0.0 into +0.0.
    let out = w.data().iter().map(|&v| (v / scale).round() * scale + 0.0).collect();
    Tensor::new(w.shape().to_vec(), out).expect("same shape")
}

/// Straight-through gradient: `upstream` where `|w| ≤ clip`, zero elsewhere.
pub fn ste_backward(upstream: &Tensor, w: &Tensor, clip: f64) -> Result<Tensor> {
    if upstream.shape() != w.shape() {
        return Err(Error::Shape {
            op: "ste_backward",
            lhs: upstream.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let out = upstream
        .data()
        .iter()
        .zip(w.data())
        .map(|(&g, &v)| if v.abs() <= clip { g } else { 0.0 })
        .collect();
    Tensor::new(w.shape().to_vec(), out)
}

/// Weight payload of a layer stored with `candidate`.
pub fn payload_bits(candidate: &QuantCandidate, param_count: usize) -> u64 {
    candidate.bits as u64 * param_count as u64
}
