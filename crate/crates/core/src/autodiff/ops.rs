//! Elementwise, reduction, dense, pooling and loss operations.

use super::{GradSink, Graph, Node, Op, Var};
use crate::error::{Error, Result};
use crate::gemm::{gemm, MatRef};
use crate::quant::{ste_backward, QuantCandidate};
use crate::tensor::Tensor;

/// Window geometry for 2-D pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeom {
    pub kernel: usize,
    pub stride: usize,
}

impl PoolGeom {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self { kernel, stride }
    }

    fn output_extent(&self, input: usize) -> Option<usize> {
        if self.kernel == 0 || self.stride == 0 || input < self.kernel {
            None
        } else {
            Some((input - self.kernel) / self.stride + 1)
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn nchw(op: &'static str, t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::InvalidArgument {
            op,
            reason: format!("expected NCHW input, got shape {:?}", t.shape()),
        }),
    }
}

impl Graph {
    fn binary_map(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, record: Op) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(op, va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, record, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a * factor).collect()).unwrap();
        let rg = self.requires_grad(x);
        self.push(out, Op::Scale(x, factor), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a + c).collect()).unwrap();
        let rg = self.requires_grad(x);
        self.push(out, Op::Offset(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a.max(0.0)).collect()).unwrap();
        let rg = self.requires_grad(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.sum() / v.len() as f64;
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Collapses every axis after the first.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let batch = shape.first().copied().unwrap_or(1);
        let rest: usize = shape.iter().skip(1).product();
        self.reshape(x, &[batch, rest])
    }

    /// Fully connected layer without bias: `x [N, in] · wᵀ` for `w [out, in]`.
    pub fn dense(&mut self, x: Var, w: Var) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let (n, input) = match *vx.shape() {
            [n, i] => (n, i),
            _ => return Err(Error::Shape { op: "dense", lhs: vx.shape().to_vec(), rhs: vw.shape().to_vec() }),
        };
        let out_features = match *vw.shape() {
            [o, i] if i == input => o,
            _ => return Err(Error::Shape { op: "dense", lhs: vx.shape().to_vec(), rhs: vw.shape().to_vec() }),
        };
        let mut out = vec![0.0; n * out_features];
        gemm(
            n,
            input,
            out_features,
            MatRef::row_major(vx.data(), input),
            MatRef::transposed(vw.data(), input),
            0.0,
            &mut out,
        );
        let out = Tensor::new(vec![n, out_features], out)?;
        let rg = self.any_grad(&[x, w]);
        Ok(self.push(out, Op::Dense { x, w }, rg))
    }

    pub fn max_pool2d(&mut self, x: Var, pool: PoolGeom) -> Result<Var> {
        let v = self.value(x);
        let [n, c, h, w] = nchw("max_pool2d", v)?;
        let (oh, ow) = match (pool.output_extent(h), pool.output_extent(w)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::InvalidArgument {
                    op: "max_pool2d",
                    reason: format!("window {pool:?} does not fit input {:?}", v.shape()),
                })
            }
        };
        let data = v.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = base;
                    for ky in 0..pool.kernel {
                        let row = base + (oy * pool.stride + ky) * w + ox * pool.stride;
                        for kx in 0..pool.kernel {
                            let val = data[row + kx];
                            if val > best {
                                best = val;
                                best_idx = row + kx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
        let out = Tensor::new(vec![n, c, oh, ow], out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::MaxPool2d { x, argmax }, rg))
    }

    pub fn avg_pool2d(&mut self, x: Var, pool: PoolGeom) -> Result<Var> {
        let v = self.value(x);
        let [n, c, h, w] = nchw("avg_pool2d", v)?;
        let (oh, ow) = match (pool.output_extent(h), pool.output_extent(w)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::InvalidArgument {
                    op: "avg_pool2d",
                    reason: format!("window {pool:?} does not fit input {:?}", v.shape()),
                })
            }
        };
        let norm = 1.0 / (pool.kernel * pool.kernel) as f64;
        let data = v.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..pool.kernel {
                        let row = base + (oy * pool.stride + ky) * w + ox * pool.stride;
                        acc += data[row..row + pool.kernel].iter().sum::<f64>();
                    }
                    out.push(acc * norm);
                }
            }
        }
        let out = Tensor::new(vec![n, c, oh, ow], out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::AvgPool2d { x, pool }, rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let cols = *v.shape().last().ok_or(Error::InvalidArgument {
            op: "softmax",
            reason: "scalar input".into(),
        })?;
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let out = Tensor::new(v.shape().to_vec(), out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    /// `Σ_j weights[j] · xs[j]` for equally shaped `xs` and a 1-D `weights`.
    pub fn weighted_sum(&mut self, xs: &[Var], weights: Var) -> Result<Var> {
        let vw = self.value(weights);
        if vw.shape() != [xs.len()] || xs.is_empty() {
            return Err(Error::Shape {
                op: "weighted_sum",
                lhs: vec![xs.len()],
                rhs: vw.shape().to_vec(),
            });
        }
        let first = self.value(xs[0]);
        let shape = first.shape().to_vec();
        let mut acc = vec![0.0; first.len()];
        for (j, &x) in xs.iter().enumerate() {
            let vx = self.value(x);
            same_shape("weighted_sum", self.value(xs[0]), vx)?;
            let p = self.value(weights).data()[j];
            for (a, b) in acc.iter_mut().zip(vx.data()) {
                *a += p * b;
            }
        }
        let out = Tensor::new(shape, acc)?;
        let mut deps = xs.to_vec();
        deps.push(weights);
        let rg = self.any_grad(&deps);
        Ok(self.push(
            out,
            Op::WeightedSum {
                xs: xs.to_vec(),
                weights,
            },
            rg,
        ))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        let (batch, classes) = match *v.shape() {
            [b, c] if b == labels.len() => (b, c),
            _ => {
                return Err(Error::Shape {
                    op: "softmax_cross_entropy",
                    lhs: v.shape().to_vec(),
                    rhs: vec![labels.len()],
                })
            }
        };
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let mut probs = v.data().to_vec();
        let mut total = 0.0;
        for (row, (z, &label)) in probs.chunks_mut(classes).zip(v.data().chunks(classes).zip(labels)) {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|&a| (a - max).exp()).sum::<f64>().ln();
            total += lse - z[label];
            softmax_in_place(row);
        }
        let loss = Tensor::scalar(total / batch as f64);
        let rg = self.requires_grad(logits);
        Ok(self.push(
            loss,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Quantizes `w` on the forward pass; the backward pass is the clipped
    /// straight-through estimator.
    pub fn fake_quant(&mut self, w: Var, candidate: &QuantCandidate) -> Var {
        let vw = self.value(w);
        let out = candidate.quantize(vw);
        let clip = candidate.effective_clip(vw);
        let rg = self.requires_grad(w);
        self.push(out, Op::FakeQuant { w, clip }, rg)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for a in row.iter_mut() {
        *a = (*a - max).exp();
        total += *a;
    }
    for a in row.iter_mut() {
        *a /= total;
    }
}

fn map(t: &Tensor, f: impl Fn(usize, f64) -> f64) -> Tensor {
    let data = t.data().iter().enumerate().map(|(i, &v)| f(i, v)).collect();
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

pub(super) fn backward(graph: &Graph, node: &Node, op: &Op, up: Tensor, sink: &mut GradSink<'_>) {
    match op {
        Op::Leaf | Op::Conv2d { .. } | Op::BatchNorm(_) => unreachable!("handled by caller"),
        Op::Add(a, b) => {
            if sink.wants(*b) {
                sink.add(*b, up.clone());
            }
            sink.add(*a, up);
        }
        Op::Sub(a, b) => {
            if sink.wants(*b) {
                sink.add(*b, map(&up, |_, g| -g));
            }
            sink.add(*a, up);
        }
        Op::Mul(a, b) => {
            let (va, vb) = (graph.value(*a), graph.value(*b));
            if sink.wants(*a) {
                sink.add(*a, map(&up, |i, g| g * vb.data()[i]));
            }
            if sink.wants(*b) {
                sink.add(*b, map(&up, |i, g| g * va.data()[i]));
            }
        }
        Op::Scale(x, factor) => sink.add(*x, map(&up, |_, g| g * factor)),
        Op::Offset(x) => sink.add(*x, up),
        Op::Relu(x) => {
            let vx = graph.value(*x);
            sink.add(*x, map(&up, |i, g| if vx.data()[i] > 0.0 { g } else { 0.0 }));
        }
        Op::Sum(x) => {
            let g = up.data()[0];
            sink.add(*x, Tensor::full(graph.value(*x).shape(), g));
        }
        Op::Mean(x) => {
            let vx = graph.value(*x);
            let g = up.data()[0] / vx.len() as f64;
            sink.add(*x, Tensor::full(vx.shape(), g));
        }
        Op::Reshape(x) => {
            let shape = graph.value(*x).shape().to_vec();
            sink.add(*x, Tensor::new(shape, up.into_data()).unwrap());
        }
        Op::Dense { x, w } => {
            let (vx, vw) = (graph.value(*x), graph.value(*w));
            let (n, input) = (vx.shape()[0], vx.shape()[1]);
            let out_features = vw.shape()[0];
            if sink.wants(*x) {
                let mut dx = vec![0.0; n * input];
                gemm(
                    n,
                    out_features,
                    input,
                    MatRef::row_major(up.data(), out_features),
                    MatRef::row_major(vw.data(), input),
                    0.0,
                    &mut dx,
                );
                sink.add_slice(*x, &dx);
            }
            if sink.wants(*w) {
                let mut dw = vec![0.0; out_features * input];
                gemm(
                    out_features,
                    n,
                    input,
                    MatRef::transposed(up.data(), out_features),
                    MatRef::row_major(vx.data(), input),
                    0.0,
                    &mut dw,
                );
                sink.add_slice(*w, &dw);
            }
        }
        Op::MaxPool2d { x, argmax } => {
            let mut dx = vec![0.0; graph.value(*x).len()];
            for (&src, &g) in argmax.iter().zip(up.data()) {
                dx[src] += g;
            }
            sink.add_slice(*x, &dx);
        }
        Op::AvgPool2d { x, pool } => {
            let vx = graph.value(*x);
            let [n, c, h, w] = [vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]];
            let (oh, ow) = (node.value.shape()[2], node.value.shape()[3]);
            let norm = 1.0 / (pool.kernel * pool.kernel) as f64;
            let mut dx = vec![0.0; vx.len()];
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = up.data()[(plane * oh + oy) * ow + ox] * norm;
                        for ky in 0..pool.kernel {
                            let row = base + (oy * pool.stride + ky) * w + ox * pool.stride;
                            for d in &mut dx[row..row + pool.kernel] {
                                *d += g;
                            }
                        }
                    }
                }
            }
            sink.add_slice(*x, &dx);
        }
        Op::Softmax(x) => {
            let y = &node.value;
            let cols = *y.shape().last().unwrap();
            let mut dx = vec![0.0; y.len()];
            for ((dxr, yr), gr) in dx.chunks_mut(cols).zip(y.data().chunks(cols)).zip(up.data().chunks(cols)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((d, &yv), &g) in dxr.iter_mut().zip(yr).zip(gr) {
                    *d = yv * (g - dot);
                }
            }
            sink.add_slice(*x, &dx);
        }
        Op::WeightedSum { xs, weights } => {
            let pw = graph.value(*weights).data().to_vec();
            if sink.wants(*weights) {
                let dw: Vec<f64> = xs
                    .iter()
                    .map(|&x| graph.value(x).data().iter().zip(up.data()).map(|(a, b)| a * b).sum())
                    .collect();
                sink.add_slice(*weights, &dw);
            }
            for (j, &x) in xs.iter().enumerate() {
                if sink.wants(x) {
                    let p = pw[j];
                    sink.add(x, map(&up, |_, g| g * p));
                }
            }
        }
        Op::SoftmaxCrossEntropy { logits, labels, probs } => {
            let classes = graph.value(*logits).shape()[1];
            let scale = up.data()[0] / labels.len() as f64;
            let mut dx = probs.clone();
            for (row, &label) in dx.chunks_mut(classes).zip(labels) {
                row[label] -= 1.0;
                for v in row.iter_mut() {
                    *v *= scale;
                }
            }
            sink.add_slice(*logits, &dx);
        }
        Op::FakeQuant { w, clip } => {
            let grad = ste_backward(&up, graph.value(*w), *clip).expect("shapes checked at record time");
            sink.add(*w, grad);
        }
    }
}
