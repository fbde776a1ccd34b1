use crate::autodiff::{BatchStats, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::layer::{LayerSpec, LayerVars, QuantLayer};
use crate::nn::network::Network;
use crate::quant::QuantCandidate;
use crate::tensor::Tensor;

/// Per-layer architecture logits `α_i`, one entry per candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchLogits {
    rows: Vec<Vec<f64>>,
}

impl ArchLogits {
    /// All-zero logits: uniform probabilities over candidates.
    pub fn zeros(layers: usize, candidates: usize) -> Self {
        Self {
            rows: vec![vec![0.0; candidates]; layers],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.iter().any(|r| r.is_empty()) {
            return Err(Error::InvalidArgument {
                op: "ArchLogits::from_rows",
                reason: "every layer needs at least one candidate".into(),
            });
        }
        Ok(Self { rows })
    }

    pub fn layers(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, layer: usize) -> Option<&[f64]> {
        self.rows.get(layer).map(Vec::as_slice)
    }

    pub fn row_mut(&mut self, layer: usize) -> Option<&mut Vec<f64>> {
        self.rows.get_mut(layer)
    }

    /// `softmax(α_i)`.
    pub fn probabilities(&self, layer: usize) -> Vec<f64> {
        let mut p = self.rows[layer].clone();
        crate::autodiff::softmax_row(&mut p);
        p
    }

    pub fn all_probabilities(&self) -> Vec<Vec<f64>> {
        (0..self.layers()).map(|i| self.probabilities(i)).collect()
    }

    pub fn top_probability(&self, layer: usize) -> f64 {
        self.probabilities(layer).into_iter().fold(0.0, f64::max)
    }
}

/// Relaxed mixed-layer forward: `Σ_j softmax(α)_j · B_j(op(x, Q_j(w)))`.
///
/// `layer` must have relaxed precision; `alpha` is its logit row.
pub fn mix_forward(g: &mut Graph, x: Var, layer: &QuantLayer, vars: &LayerVars, alpha: Var, train: bool) -> Result<(Var, Vec<(usize, BatchStats)>)> {
    layer.forward(g, x, vars, Some(alpha), train)
}

fn check_alignment(alpha_len: usize, specs: &[LayerSpec]) -> Result<()> {
    if alpha_len != specs.len() {
        return Err(Error::Shape {
            op: "expected_size",
            lhs: vec![alpha_len],
            rhs: vec![specs.len()],
        });
    }
    Ok(())
}

/// Expected weight payload in bits, `Σ_i n_i Σ_j softmax(α_i)_j · bits_j`, as a graph node.
pub fn expected_size(g: &mut Graph, alpha: &[Var], specs: &[LayerSpec], candidates: &[QuantCandidate]) -> Result<Var> {
    check_alignment(alpha.len(), specs)?;
    let mut total: Option<Var> = None;
    for (&a, spec) in alpha.iter().zip(specs) {
        if g.value(a).shape() != [candidates.len()] {
            return Err(Error::Shape {
                op: "expected_size",
                lhs: vec![candidates.len()],
                rhs: g.value(a).shape().to_vec(),
            });
        }
        let p = g.softmax(a)?;
        let n = spec.param_count() as f64;
        let weights = g.constant(Tensor::vector(&candidates.iter().map(|c| n * c.bits as f64).collect::<Vec<_>>()));
        let prod = g.mul(p, weights)?;
        let term = g.sum(prod);
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    total.ok_or(Error::InvalidArgument {
        op: "expected_size",
        reason: "no layers".into(),
    })
}

/// Plain-number form of [`expected_size`].
pub fn expected_size_value(arch: &ArchLogits, specs: &[LayerSpec], candidates: &[QuantCandidate]) -> Result<f64> {
    check_alignment(arch.layers(), specs)?;
    let mut total = 0.0;
    for (i, spec) in specs.iter().enumerate() {
        let p = arch.probabilities(i);
        if p.len() != candidates.len() {
            return Err(Error::Shape {
                op: "expected_size",
                lhs: vec![candidates.len()],
                rhs: vec![p.len()],
            });
        }
        let bits: f64 = p.iter().zip(candidates).map(|(p, c)| p * c.bits as f64).sum();
        total += spec.param_count() as f64 * bits;
    }
    Ok(total)
}

/// Size term of the logit objective: expected bits per weight, i.e.
/// [`expected_size`] divided by the total weight count.
pub fn size_objective(g: &mut Graph, alpha: &[Var], specs: &[LayerSpec], candidates: &[QuantCandidate]) -> Result<Var> {
    let bits = expected_size(g, alpha, specs, candidates)?;
    let weights: usize = specs.iter().map(LayerSpec::param_count).sum();
    Ok(g.scale(bits, 1.0 / weights.max(1) as f64))
}

/// Multiplier for the loss constraint: `0` when `valid_loss ≤ θ`, else `lambda_max`.
pub fn update_lambda(valid_loss: f64, theta: f64, lambda_max: f64) -> Result<f64> {
    if !(lambda_max > 0.0) {
        return Err(Error::InvalidArgument {
            op: "update_lambda",
            reason: format!("lambda_max must be positive, got {lambda_max}"),
        });
    }
    if !valid_loss.is_finite() {
        return Err(Error::NonFinite {
            value: valid_loss,
            context: "validation loss".into(),
        });
    }
    Ok(if valid_loss - theta <= 0.0 { 0.0 } else { lambda_max })
}

/// Result of one logit update.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaStep {
    pub valid_loss: f64,
    pub lambda: f64,
    /// Expected payload in bits before the step.
    pub expected_bits: f64,
}

/// One gradient step on the logits against `size + λ·(L_valid − θ)` with
/// the network weights frozen.
pub fn alpha_step(
    net: &Network,
    arch: &mut ArchLogits,
    images: Tensor,
    labels: &[usize],
    lambda: f64,
    theta: f64,
    lr_alpha: f64,
    candidates: &[QuantCandidate],
) -> Result<AlphaStep> {
    alpha_step_with(net, arch, images, labels, theta, lr_alpha, candidates, |_| Ok(lambda))
}

/// Like [`alpha_step`], with `λ` chosen from the validation loss of the same batch.
#[allow(clippy::too_many_arguments)]
pub(crate) fn alpha_step_with(
    net: &Network,
    arch: &mut ArchLogits,
    images: Tensor,
    labels: &[usize],
    theta: f64,
    lr_alpha: f64,
    candidates: &[QuantCandidate],
    choose_lambda: impl FnOnce(f64) -> Result<f64>,
) -> Result<AlphaStep> {
    let mut g = Graph::new();
    let x = g.constant(images);
    let bind = net.bind(&mut g, false, Some(arch), true)?;
    let (logits, _) = net.forward(&mut g, x, &bind, true)?;
    let loss = g.softmax_cross_entropy(logits, labels)?;
    let valid_loss = g.value(loss).item()?;
    if !valid_loss.is_finite() {
        return Err(Error::NonFinite {
            value: valid_loss,
            context: "validation loss".into(),
        });
    }
    let lambda = choose_lambda(valid_loss)?;

    let alpha: Vec<Var> = bind
        .alpha
        .iter()
        .map(|a| {
            a.ok_or(Error::InvalidArgument {
                op: "alpha_step",
                reason: "every layer must be relaxed".into(),
            })
        })
        .collect::<Result<_>>()?;
    let specs = net.specs();
    let expected_bits = expected_size_value(arch, &specs, candidates)?;
    let size = size_objective(&mut g, &alpha, &specs, candidates)?;
    // λ = 0 leaves the size term alone; skip the network backward entirely.
    let objective = if lambda == 0.0 {
        size
    } else {
        let slack = g.add_scalar(loss, -theta);
        let penalty = g.scale(slack, lambda);
        g.add(size, penalty)?
    };
    let grads = g.backward(objective)?;
    for (i, &a) in alpha.iter().enumerate() {
        let grad = grads.get(a).expect("logit gradient");
        let row = arch.row_mut(i).expect("aligned rows");
        for (v, d) in row.iter_mut().zip(grad.data()) {
            *v -= lr_alpha * d;
        }
    }
    Ok(AlphaStep {
        valid_loss,
        lambda,
        expected_bits,
    })
}
