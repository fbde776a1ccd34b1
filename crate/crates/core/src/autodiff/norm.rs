//! Per-channel batch normalization for `[N, C]` and `[N, C, ...]` inputs.

use super::{GradSink, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which statistics normalize the input.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a> {
    /// Batch statistics; the caller folds the returned [`BatchStats`] into its running estimates.
    Train,
    /// Stored running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel statistics of one training batch (biased variance).
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

pub(crate) struct BnTape {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    train: bool,
    n: usize,
    c: usize,
    inner: usize,
}

impl Graph {
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64, mode: BnMode<'_>) -> Result<(Var, Option<BatchStats>)> {
        if eps <= 0.0 {
            return Err(Error::InvalidArgument {
                op: "batch_norm",
                reason: format!("eps must be positive, got {eps}"),
            });
        }
        let vx = self.value(x);
        let shape = vx.shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::InvalidArgument {
                op: "batch_norm",
                reason: format!("expected [N, C, ...] input, got {shape:?}"),
            });
        }
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(Error::Shape {
                    op: "batch_norm",
                    lhs: shape.clone(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let count = n * inner;
        let data = vx.data();

        let (mean, var, train) = match mode {
            BnMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        let off = (b * c + ch) * inner;
                        s += data[off..off + inner].iter().sum::<f64>();
                    }
                    let m = s / count as f64;
                    let mut ss = 0.0;
                    for b in 0..n {
                        let off = (b * c + ch) * inner;
                        ss += data[off..off + inner].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = ss / count as f64;
                }
                (mean, var, true)
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::Shape {
                        op: "batch_norm",
                        lhs: shape.clone(),
                        rhs: vec![mean.len(), var.len()],
                    });
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; data.len()];
        let mut out = vec![0.0; data.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * inner;
                for i in off..off + inner {
                    let h = (data[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g[ch] * h + bt[ch];
                }
            }
        }
        let out = Tensor::new(shape, out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        let tape = BnTape {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
            n,
            c,
            inner,
        };
        let y = self.push(out, Op::BatchNorm(Box::new(tape)), rg);
        let stats = train.then_some(BatchStats { mean, var, count });
        Ok((y, stats))
    }
}

pub(super) fn backward(graph: &Graph, t: &BnTape, up: &Tensor, sink: &mut GradSink<'_>) {
    let (n, c, inner) = (t.n, t.c, t.inner);
    let dy = up.data();
    let gamma = graph.value(t.gamma).data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * inner;
            for i in off..off + inner {
                dgamma[ch] += dy[i] * t.xhat[i];
                dbeta[ch] += dy[i];
            }
        }
    }
    if sink.wants(t.x) {
        let m = (n * inner) as f64;
        let mut dx = vec![0.0; dy.len()];
        for ch in 0..c {
            // Σ dxhat = γ·Σdy and Σ dxhat·xhat = γ·dγ.
            let (sum_dxhat, sum_dxhat_xhat) = (gamma[ch] * dbeta[ch], gamma[ch] * dgamma[ch]);
            let k = gamma[ch] * t.inv_std[ch];
            for b in 0..n {
                let off = (b * c + ch) * inner;
                for i in off..off + inner {
                    dx[i] = if t.train {
                        t.inv_std[ch] / m * (m * gamma[ch] * dy[i] - sum_dxhat - t.xhat[i] * sum_dxhat_xhat)
                    } else {
                        k * dy[i]
                    };
                }
            }
        }
        sink.add_slice(t.x, &dx);
    }
    sink.add_slice(t.gamma, &dgamma);
    sink.add_slice(t.beta, &dbeta);
}
