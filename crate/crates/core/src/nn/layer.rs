use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, BnMode, ConvGeom, Graph, Var};
use crate::error::{Error, Result};
use crate::quant::QuantCandidate;
use crate::tensor::Tensor;

/// Running-statistics momentum: `running = 0.9 · running + 0.1 · batch`.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv { stride: usize, padding: usize },
    DepthwiseConv { stride: usize, padding: usize },
    Dense,
}

/// Static description of one quantizable layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub weight_shape: Vec<usize>,
    pub quantizable: bool,
}

impl LayerSpec {
    /// `n_i`, the number of weights in the layer.
    pub fn param_count(&self) -> usize {
        self.weight_shape.iter().product()
    }

    /// Channels produced by the layer (and normalized by its batch norm).
    pub fn out_channels(&self) -> usize {
        self.weight_shape[0]
    }
}

/// Per-channel batch normalization state.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    /// Folds batch statistics into the running estimates (unbiased variance).
    pub fn fold(&mut self, stats: &BatchStats) {
        let correction = if stats.count > 1 {
            stats.count as f64 / (stats.count - 1) as f64
        } else {
            1.0
        };
        for (r, m) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        for (r, v) in self.running_var.iter_mut().zip(&stats.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v * correction;
        }
    }
}

/// How a layer's weights are represented on the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum Precision {
    Float,
    Fixed(QuantCandidate),
    /// Softmax mixture over candidates, one batch norm per candidate.
    Relaxed(Vec<QuantCandidate>),
}

impl Precision {
    pub fn norm_count(&self) -> usize {
        match self {
            Precision::Relaxed(c) => c.len(),
            _ => 1,
        }
    }

    /// Clip range applied to the master weights after every update, if any.
    pub fn weight_clip(&self) -> Option<f64> {
        let clip_of = |c: &QuantCandidate| c.is_binary().then(|| c.clip.unwrap_or(1.0));
        match self {
            Precision::Float => None,
            Precision::Fixed(c) => clip_of(c),
            Precision::Relaxed(cs) => cs.iter().filter_map(clip_of).reduce(f64::min),
        }
    }
}

/// A weight-carrying layer with its batch norm(s).
#[derive(Clone, Debug, PartialEq)]
pub struct QuantLayer {
    pub spec: LayerSpec,
    pub weight: Tensor,
    pub precision: Precision,
    pub norms: Vec<BatchNorm>,
}

/// Graph handles for one layer's parameters.
#[derive(Clone, Debug)]
pub struct LayerVars {
    pub weight: Var,
    pub norms: Vec<(Var, Var)>,
}

impl QuantLayer {
    pub fn new(spec: LayerSpec, weight: Tensor) -> Result<Self> {
        if weight.shape() != spec.weight_shape.as_slice() {
            return Err(Error::Shape {
                op: "QuantLayer::new",
                lhs: spec.weight_shape.clone(),
                rhs: weight.shape().to_vec(),
            });
        }
        let norms = vec![BatchNorm::new(spec.out_channels())];
        Ok(Self {
            spec,
            weight,
            precision: Precision::Float,
            norms,
        })
    }

    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> LayerVars {
        let weight = g.leaf(self.weight.clone(), requires_grad);
        let norms = self
            .norms
            .iter()
            .map(|n| (g.leaf(n.gamma.clone(), requires_grad), g.leaf(n.beta.clone(), requires_grad)))
            .collect();
        LayerVars { weight, norms }
    }

    /// The layer's linear operator (convolution or dense) applied with weights `w`.
    pub fn apply_op(&self, g: &mut Graph, x: Var, w: Var) -> Result<Var> {
        match self.spec.kind {
            LayerKind::Conv { stride, padding } => g.conv2d(x, w, ConvGeom::new(stride, padding)),
            LayerKind::DepthwiseConv { stride, padding } => {
                let channels = g.value(x).shape().get(1).copied().unwrap_or(0);
                g.conv2d(x, w, ConvGeom::depthwise(stride, padding, channels))
            }
            LayerKind::Dense => g.dense(x, w),
        }
    }

    fn normalize(&self, g: &mut Graph, y: Var, vars: &LayerVars, idx: usize, train: bool) -> Result<(Var, Option<BatchStats>)> {
        let bn = &self.norms[idx];
        let (gamma, beta) = vars.norms[idx];
        let mode = if train {
            BnMode::Train
        } else {
            BnMode::Eval {
                mean: &bn.running_mean,
                var: &bn.running_var,
            }
        };
        g.batch_norm(y, gamma, beta, BN_EPS, mode)
    }

    /// One quantized branch: `B_j(op(x, Q_j(w)))`.
    pub fn branch(&self, g: &mut Graph, x: Var, vars: &LayerVars, candidate: Option<&QuantCandidate>, norm: usize, train: bool) -> Result<(Var, Option<BatchStats>)> {
        let w = match candidate {
            Some(c) => g.fake_quant(vars.weight, c),
            None => vars.weight,
        };
        let y = self.apply_op(g, x, w)?;
        self.normalize(g, y, vars, norm, train)
    }

    /// Forward pass under the layer's precision. Relaxed layers need their logit row.
    pub fn forward(&self, g: &mut Graph, x: Var, vars: &LayerVars, alpha: Option<Var>, train: bool) -> Result<(Var, Vec<(usize, BatchStats)>)> {
        let mut stats = Vec::new();
        let out = match &self.precision {
            Precision::Float | Precision::Fixed(_) => {
                let cand = match &self.precision {
                    Precision::Fixed(c) => Some(c),
                    _ => None,
                };
                let (y, s) = self.branch(g, x, vars, cand, 0, train)?;
                stats.extend(s.map(|s| (0, s)));
                y
            }
            Precision::Relaxed(candidates) => {
                let alpha = alpha.ok_or_else(|| Error::InvalidArgument {
                    op: "mix_forward",
                    reason: format!("relaxed layer {} has no logits", self.spec.name),
                })?;
                let k = g.value(alpha).len();
                if k != candidates.len() || g.value(alpha).rank() != 1 {
                    return Err(Error::Shape {
                        op: "mix_forward",
                        lhs: vec![candidates.len()],
                        rhs: g.value(alpha).shape().to_vec(),
                    });
                }
                let probs = g.softmax(alpha)?;
                let mut branches = Vec::with_capacity(k);
                for (j, c) in candidates.iter().enumerate() {
                    let (b, s) = self.branch(g, x, vars, Some(c), j, train)?;
                    stats.extend(s.map(|s| (j, s)));
                    branches.push(b);
                }
                g.weighted_sum(&branches, probs)?
            }
        };
        Ok((out, stats))
    }

    pub fn clip_weights(&mut self) {
        if let Some(c) = self.precision.weight_clip() {
            for v in self.weight.data_mut() {
                *v = v.clamp(-c, c);
            }
        }
    }
}
