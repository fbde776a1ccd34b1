use crate::autodiff::{BatchStats, Graph, PoolGeom, Var};
use crate::error::{Error, Result};
use crate::nn::layer::{LayerSpec, LayerVars, Precision, QuantLayer};
use crate::quant::QuantCandidate;
use crate::search::ArchLogits;
use crate::tensor::Tensor;

/// One step of a feed-forward network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Quantizable layer (index into [`Network::layers`]) followed by its batch norm.
    Layer(usize),
    Relu,
    MaxPool(PoolGeom),
    AvgPool(PoolGeom),
    Flatten,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub name: String,
    /// Per-sample input shape, e.g. `[1, 28, 28]`.
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub stages: Vec<Stage>,
    pub layers: Vec<QuantLayer>,
}

/// Graph handles for every parameter of a network.
#[derive(Clone, Debug)]
pub struct Bindings {
    pub layers: Vec<LayerVars>,
    /// Logit row per layer (relaxed layers only).
    pub alpha: Vec<Option<Var>>,
}

impl Bindings {
    /// Trainable weights and batch-norm affine parameters, in [`Network::params_mut`] order.
    pub fn params(&self) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(l.weight).chain(l.norms.iter().flat_map(|&(g, b)| [g, b])))
            .collect()
    }
}

/// Batch statistics produced by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct NormUpdate {
    pub layer: usize,
    pub norm: usize,
    pub stats: BatchStats,
}

impl Network {
    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn param_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.spec.param_count()).collect()
    }

    /// Total trainable parameter count, batch-norm affine parameters included.
    pub fn trainable_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.norms.iter().map(|n| n.gamma.len() + n.beta.len()).sum::<usize>())
            .sum()
    }

    /// Leaves for all parameters. Relaxed layers read their logit row from `arch`.
    pub fn bind(&self, g: &mut Graph, weights_grad: bool, arch: Option<&ArchLogits>, alpha_grad: bool) -> Result<Bindings> {
        let layers = self.layers.iter().map(|l| l.bind(g, weights_grad)).collect();
        let mut alpha = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let row = match (&layer.precision, arch) {
                (Precision::Relaxed(_), Some(a)) => {
                    let row = a.row(i).ok_or_else(|| Error::Shape {
                        op: "Network::bind",
                        lhs: vec![self.layers.len()],
                        rhs: vec![a.layers()],
                    })?;
                    Some(g.leaf(Tensor::vector(row), alpha_grad))
                }
                (Precision::Relaxed(_), None) => {
                    return Err(Error::InvalidArgument {
                        op: "Network::bind",
                        reason: "relaxed network requires architecture logits".into(),
                    })
                }
                _ => None,
            };
            alpha.push(row);
        }
        Ok(Bindings { layers, alpha })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, b: &Bindings, train: bool) -> Result<(Var, Vec<NormUpdate>)> {
        let shape = g.value(x).shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            return Err(Error::Shape {
                op: "Network::forward",
                lhs: self.input_shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let mut h = x;
        let mut updates = Vec::new();
        for stage in &self.stages {
            h = match *stage {
                Stage::Layer(i) => {
                    let (y, stats) = self.layers[i].forward(g, h, &b.layers[i], b.alpha[i], train)?;
                    updates.extend(stats.into_iter().map(|(norm, stats)| NormUpdate { layer: i, norm, stats }));
                    y
                }
                Stage::Relu => g.relu(h),
                Stage::MaxPool(p) => g.max_pool2d(h, p)?,
                Stage::AvgPool(p) => g.avg_pool2d(h, p)?,
                Stage::Flatten => g.flatten(h)?,
            };
        }
        Ok((h, updates))
    }

    /// Mutable parameters in [`Bindings::params`] order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let QuantLayer { weight, norms, .. } = l;
                std::iter::once(weight).chain(norms.iter_mut().flat_map(|n| [&mut n.gamma, &mut n.beta]))
            })
            .collect()
    }

    pub fn apply_norm_updates(&mut self, updates: &[NormUpdate]) {
        for u in updates {
            self.layers[u.layer].norms[u.norm].fold(&u.stats);
        }
    }

    pub fn clip_weights(&mut self) {
        for l in &mut self.layers {
            l.clip_weights();
        }
    }

    /// Replaces every layer's precision with the relaxed mixture over `candidates`,
    /// cloning each layer's existing batch norm into one copy per candidate.
    pub fn relax(&self, candidates: &[QuantCandidate]) -> Result<Network> {
        if candidates.is_empty() {
            return Err(Error::InvalidArgument {
                op: "relax",
                reason: "empty candidate list".into(),
            });
        }
        for c in candidates {
            c.validate()?;
        }
        let mut out = self.clone();
        for l in &mut out.layers {
            let base = l.norms[0].clone();
            l.norms = vec![base; candidates.len()];
            l.precision = Precision::Relaxed(candidates.to_vec());
            l.clip_weights();
        }
        Ok(out)
    }

    /// Uniform fixed precision on every layer (`None` restores float).
    pub fn with_uniform(&self, candidate: Option<QuantCandidate>) -> Result<Network> {
        let mut out = self.clone();
        for l in &mut out.layers {
            if !matches!(l.precision, Precision::Float | Precision::Fixed(_)) {
                return Err(Error::InvalidArgument {
                    op: "with_uniform",
                    reason: format!("layer {} is relaxed; discretize it first", l.spec.name),
                });
            }
            l.precision = match candidate {
                Some(c) if c.kind != crate::quant::QuantKind::Float => Precision::Fixed(c),
                _ => Precision::Float,
            };
            l.clip_weights();
        }
        Ok(out)
    }

    pub fn is_relaxed(&self) -> bool {
        self.layers.iter().any(|l| matches!(l.precision, Precision::Relaxed(_)))
    }
}
