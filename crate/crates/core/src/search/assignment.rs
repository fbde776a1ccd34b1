use crate::error::{Error, Result};
use crate::nn::layer::{LayerSpec, Precision};
use crate::nn::network::Network;
use crate::quant::{payload_bits, QuantCandidate, QuantKind, FLOAT_BITS};
use crate::search::ArchLogits;

/// One layer's discrete choice.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignedLayer {
    pub name: String,
    /// `n_i`.
    pub params: usize,
    pub candidate: QuantCandidate,
    /// Index of `candidate` in the candidate list it was chosen from.
    pub index: usize,
}

impl AssignedLayer {
    pub fn bits(&self) -> u64 {
        payload_bits(&self.candidate, self.params)
    }
}

/// A discrete layer → candidate map.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub layers: Vec<AssignedLayer>,
}

impl Assignment {
    /// Chooses candidate `indices[i]` for layer `i`.
    pub fn from_indices(specs: &[LayerSpec], candidates: &[QuantCandidate], indices: &[usize]) -> Result<Self> {
        if specs.len() != indices.len() {
            return Err(Error::Coverage(format!("{} layers but {} choices", specs.len(), indices.len())));
        }
        let layers = specs
            .iter()
            .zip(indices)
            .map(|(spec, &index)| {
                let candidate = *candidates.get(index).ok_or_else(|| Error::InvalidArgument {
                    op: "Assignment::from_indices",
                    reason: format!("candidate index {index} out of range for {} candidates", candidates.len()),
                })?;
                Ok(AssignedLayer {
                    name: spec.name.clone(),
                    params: spec.param_count(),
                    candidate,
                    index,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// The same candidate on every layer.
    pub fn uniform(specs: &[LayerSpec], candidate: QuantCandidate) -> Self {
        Self {
            layers: specs
                .iter()
                .map(|s| AssignedLayer {
                    name: s.name.clone(),
                    params: s.param_count(),
                    candidate,
                    index: 0,
                })
                .collect(),
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.index).collect()
    }

    /// `Σ_i bits_i · n_i`.
    pub fn total_bits(&self) -> u64 {
        self.layers.iter().map(AssignedLayer::bits).sum()
    }

    /// `32 · Σ_i n_i`.
    pub fn baseline_bits(&self) -> u64 {
        FLOAT_BITS as u64 * self.layers.iter().map(|l| l.params as u64).sum::<u64>()
    }

    pub fn compression_rate(&self) -> f64 {
        self.baseline_bits() as f64 / self.total_bits() as f64
    }

    /// Compact label such as `8-1-1`.
    pub fn label(&self) -> String {
        self.layers.iter().map(|l| l.candidate.bits.to_string()).collect::<Vec<_>>().join("-")
    }
}

/// Per layer, the candidate with the largest logit; exact ties go to fewer bits.
pub fn discretize(arch: &ArchLogits, specs: &[LayerSpec], candidates: &[QuantCandidate]) -> Result<Assignment> {
    if arch.layers() != specs.len() {
        return Err(Error::Coverage(format!("{} logit rows for {} layers", arch.layers(), specs.len())));
    }
    let mut indices = Vec::with_capacity(specs.len());
    for (i, row) in arch.rows().iter().enumerate() {
        if row.len() != candidates.len() {
            return Err(Error::Shape {
                op: "discretize",
                lhs: vec![candidates.len()],
                rhs: vec![row.len()],
            });
        }
        let mut best = 0;
        for j in 1..row.len() {
            let better = row[j] > row[best] || (row[j] == row[best] && candidates[j].bits < candidates[best].bits);
            if better {
                best = j;
            }
        }
        log::debug!("{}: candidate {} ({})", specs[i].name, best, candidates[best].label());
        indices.push(best);
    }
    Assignment::from_indices(specs, candidates, &indices)
}

/// Collapses each layer to its assigned quantizer. Relaxed layers keep only the
/// batch norm that belonged to the chosen candidate.
pub fn apply_assignment(net: &Network, assignment: &Assignment) -> Result<Network> {
    if net.layers.len() != assignment.layers.len() {
        return Err(Error::Coverage(format!(
            "assignment covers {} layers, network has {}",
            assignment.layers.len(),
            net.layers.len()
        )));
    }
    let mut out = net.clone();
    for (layer, chosen) in out.layers.iter_mut().zip(&assignment.layers) {
        if layer.spec.name != chosen.name || layer.spec.param_count() != chosen.params {
            return Err(Error::Coverage(format!(
                "assignment entry {} does not match layer {}",
                chosen.name, layer.spec.name
            )));
        }
        if let Precision::Relaxed(candidates) = &layer.precision {
            if candidates.get(chosen.index) != Some(&chosen.candidate) {
                return Err(Error::Coverage(format!(
                    "layer {}: candidate {} is not entry {} of its search space",
                    chosen.name,
                    chosen.candidate.label(),
                    chosen.index
                )));
            }
            layer.norms = vec![layer.norms[chosen.index].clone()];
        }
        layer.precision = if chosen.candidate.kind == QuantKind::Float {
            Precision::Float
        } else {
            Precision::Fixed(chosen.candidate)
        };
        layer.clip_weights();
    }
    Ok(out)
}
