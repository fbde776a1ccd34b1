//! Binary checkpoint format.
//!
//! Layout (little-endian): magic `MXQC`, `u32` format version, `u64` body
//! length, `u64` FNV-1a checksum of the body, then the body. The body holds
//! the network (stages, layer table, precisions, weights, batch-norm state)
//! followed by optional architecture logits and an optional assignment.
//! Floats are stored as raw IEEE-754 bits, so a round trip is bit-exact.

use std::path::Path;

use crate::autodiff::PoolGeom;
use crate::error::{Error, Result};
use crate::nn::layer::{BatchNorm, LayerKind, LayerSpec, Precision, QuantLayer};
use crate::nn::network::{Network, Stage};
use crate::quant::{QuantCandidate, QuantKind};
use crate::search::{AssignedLayer, ArchLogits, Assignment};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"MXQC";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

/// Everything needed to resume or report on a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub arch: Option<ArchLogits>,
    pub assignment: Option<Assignment>,
    /// Validation loss of the stored network. For a float model this is the
    /// default loss tolerance of the search.
    pub valid_loss: Option<f64>,
}

impl Checkpoint {
    pub fn new(network: Network) -> Self {
        Self {
            network,
            arch: None,
            assignment: None,
            valid_loss: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.network(&self.network);
        w.option(self.arch.as_ref(), |w, a| w.arch(a));
        w.option(self.assignment.as_ref(), |w, a| w.assignment(a));
        w.option(self.valid_loss.as_ref(), |w, v| w.f64(*v));
        let body = w.buf;
        let mut out = Vec::with_capacity(HEADER_LEN + body.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&fnv1a(&body).to_le_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Corrupt(format!("checkpoint is {} bytes, shorter than its header", bytes.len())));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::Corrupt("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let checksum = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
        let body = &bytes[HEADER_LEN..];
        if body.len() as u64 != len {
            return Err(Error::Corrupt(format!("body is {} bytes, header declares {len}", body.len())));
        }
        if fnv1a(body) != checksum {
            return Err(Error::Corrupt("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        let network = r.network()?;
        let arch = r.option(Reader::arch)?;
        let assignment = r.option(Reader::assignment)?;
        let valid_loss = r.option(Reader::f64)?;
        if r.pos != body.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self {
            network,
            arch,
            assignment,
            valid_loss,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingData(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_bytes(&bytes)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn usizes(&mut self, v: &[usize]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.usize(x));
    }

    fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }

    fn tensor(&mut self, t: &Tensor) {
        self.usizes(t.shape());
        self.f64s(t.data());
    }

    fn option<T>(&mut self, v: Option<&T>, f: impl FnOnce(&mut Self, &T)) {
        match v {
            Some(v) => {
                self.u8(1);
                f(self, v);
            }
            None => self.u8(0),
        }
    }

    fn candidate(&mut self, c: &QuantCandidate) {
        self.u32(c.bits);
        self.u8(match c.kind {
            QuantKind::BinaryWithScale => 0,
            QuantKind::AffineSymmetric => 1,
            QuantKind::Float => 2,
        });
        self.option(c.clip.as_ref(), |w, v| w.f64(*v));
    }

    fn network(&mut self, net: &Network) {
        self.str(&net.name);
        self.usizes(&net.input_shape);
        self.usize(net.classes);
        self.usize(net.stages.len());
        for stage in &net.stages {
            match *stage {
                Stage::Layer(i) => {
                    self.u8(0);
                    self.usize(i);
                }
                Stage::Relu => self.u8(1),
                Stage::MaxPool(p) => {
                    self.u8(2);
                    self.usize(p.kernel);
                    self.usize(p.stride);
                }
                Stage::AvgPool(p) => {
                    self.u8(3);
                    self.usize(p.kernel);
                    self.usize(p.stride);
                }
                Stage::Flatten => self.u8(4),
            }
        }
        self.usize(net.layers.len());
        for layer in &net.layers {
            self.str(&layer.spec.name);
            match layer.spec.kind {
                LayerKind::Conv { stride, padding } => {
                    self.u8(0);
                    self.usize(stride);
                    self.usize(padding);
                }
                LayerKind::DepthwiseConv { stride, padding } => {
                    self.u8(1);
                    self.usize(stride);
                    self.usize(padding);
                }
                LayerKind::Dense => self.u8(2),
            }
            self.usizes(&layer.spec.weight_shape);
            self.u8(layer.spec.quantizable as u8);
            match &layer.precision {
                Precision::Float => self.u8(0),
                Precision::Fixed(c) => {
                    self.u8(1);
                    self.candidate(c);
                }
                Precision::Relaxed(cs) => {
                    self.u8(2);
                    self.usize(cs.len());
                    cs.iter().for_each(|c| self.candidate(c));
                }
            }
            self.tensor(&layer.weight);
            self.usize(layer.norms.len());
            for bn in &layer.norms {
                self.tensor(&bn.gamma);
                self.tensor(&bn.beta);
                self.f64s(&bn.running_mean);
                self.f64s(&bn.running_var);
            }
        }
    }

    fn arch(&mut self, arch: &ArchLogits) {
        self.usize(arch.layers());
        arch.rows().iter().for_each(|r| self.f64s(r));
    }

    fn assignment(&mut self, a: &Assignment) {
        self.usize(a.layers.len());
        for l in &a.layers {
            self.str(&l.name);
            self.usize(l.params);
            self.candidate(&l.candidate);
            self.usize(l.index);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Corrupt(format!("unexpected end of checkpoint at byte {}", self.pos))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Corrupt(format!("length {v} does not fit in memory")))
    }

    /// A length prefix for items of at least `item_bytes` each, checked against the remaining input.
    fn len(&mut self, item_bytes: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(item_bytes) > self.buf.len() - self.pos {
            return Err(Error::Corrupt(format!("declared length {n} exceeds remaining input")));
        }
        Ok(n)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corrupt("invalid UTF-8 in name".into()))
    }

    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.usize()).collect()
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let shape = self.usizes()?;
        let data = self.f64s()?;
        Tensor::new(shape, data).map_err(|e| Error::Corrupt(format!("bad tensor: {e}")))
    }

    fn option<T>(&mut self, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<Option<T>> {
        match self.u8()? {
            0 => Ok(None),
            1 => f(self).map(Some),
            t => Err(Error::Corrupt(format!("bad option tag {t}"))),
        }
    }

    fn candidate(&mut self) -> Result<QuantCandidate> {
        let bits = self.u32()?;
        let kind = match self.u8()? {
            0 => QuantKind::BinaryWithScale,
            1 => QuantKind::AffineSymmetric,
            2 => QuantKind::Float,
            t => return Err(Error::Corrupt(format!("bad quantizer tag {t}"))),
        };
        let clip = self.option(Self::f64)?;
        let c = QuantCandidate { bits, kind, clip };
        c.validate().map_err(|e| Error::Corrupt(format!("bad candidate: {e}")))?;
        Ok(c)
    }

    fn pool(&mut self) -> Result<PoolGeom> {
        Ok(PoolGeom {
            kernel: self.usize()?,
            stride: self.usize()?,
        })
    }

    fn network(&mut self) -> Result<Network> {
        let name = self.str()?;
        let input_shape = self.usizes()?;
        let classes = self.usize()?;
        let stage_count = self.len(1)?;
        let mut stages = Vec::with_capacity(stage_count);
        for _ in 0..stage_count {
            stages.push(match self.u8()? {
                0 => Stage::Layer(self.usize()?),
                1 => Stage::Relu,
                2 => Stage::MaxPool(self.pool()?),
                3 => Stage::AvgPool(self.pool()?),
                4 => Stage::Flatten,
                t => return Err(Error::Corrupt(format!("bad stage tag {t}"))),
            });
        }
        let layer_count = self.len(1)?;
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let name = self.str()?;
            let kind = match self.u8()? {
                0 => LayerKind::Conv {
                    stride: self.usize()?,
                    padding: self.usize()?,
                },
                1 => LayerKind::DepthwiseConv {
                    stride: self.usize()?,
                    padding: self.usize()?,
                },
                2 => LayerKind::Dense,
                t => return Err(Error::Corrupt(format!("bad layer kind tag {t}"))),
            };
            let weight_shape = self.usizes()?;
            let quantizable = self.u8()? != 0;
            let precision = match self.u8()? {
                0 => Precision::Float,
                1 => Precision::Fixed(self.candidate()?),
                2 => {
                    let n = self.len(1)?;
                    Precision::Relaxed((0..n).map(|_| self.candidate()).collect::<Result<_>>()?)
                }
                t => return Err(Error::Corrupt(format!("bad precision tag {t}"))),
            };
            let weight = self.tensor()?;
            let norm_count = self.len(1)?;
            let mut norms = Vec::with_capacity(norm_count);
            for _ in 0..norm_count {
                norms.push(BatchNorm {
                    gamma: self.tensor()?,
                    beta: self.tensor()?,
                    running_mean: self.f64s()?,
                    running_var: self.f64s()?,
                });
            }
            let spec = LayerSpec {
                name,
                kind,
                weight_shape,
                quantizable,
            };
            if weight.shape() != spec.weight_shape.as_slice() || norms.len() != precision.norm_count() {
                return Err(Error::Corrupt(format!("layer {} is inconsistent", spec.name)));
            }
            layers.push(QuantLayer {
                spec,
                weight,
                precision,
                norms,
            });
        }
        if stages.iter().any(|s| matches!(*s, Stage::Layer(i) if i >= layers.len())) {
            return Err(Error::Corrupt("stage refers to a missing layer".into()));
        }
        Ok(Network {
            name,
            input_shape,
            classes,
            stages,
            layers,
        })
    }

    fn arch(&mut self) -> Result<ArchLogits> {
        let n = self.len(8)?;
        let rows = (0..n).map(|_| self.f64s()).collect::<Result<_>>()?;
        ArchLogits::from_rows(rows).map_err(|e| Error::Corrupt(e.to_string()))
    }

    fn assignment(&mut self) -> Result<Assignment> {
        let n = self.len(1)?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            layers.push(AssignedLayer {
                name: self.str()?,
                params: self.usize()?,
                candidate: self.candidate()?,
                index: self.usize()?,
            });
        }
        Ok(Assignment { layers })
    }
}
