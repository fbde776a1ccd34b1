//! Brute-force baseline: every discrete assignment is fine-tuned with the same
//! budget and seed, scored on the validation split, and the smallest one whose
//! validation loss meets the tolerance is reported.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::network::Network;
use crate::nn::train::{evaluate, TrainConfig};
use crate::quant::QuantCandidate;
use crate::search::{apply_assignment, fine_tune, Assignment};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Largest number of assignments that may be enumerated.
    pub cap: usize,
    /// Fine-tuning budget per assignment.
    pub budget: TrainConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            cap: 256,
            budget: TrainConfig::default(),
        }
    }
}

/// One enumerated assignment and its score.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleRow {
    pub assignment: Assignment,
    pub bits: u64,
    pub compression: f64,
    pub valid_loss: f64,
    pub accuracy: f64,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub theta: f64,
    pub seed: u64,
    pub candidates: Vec<QuantCandidate>,
    pub budget: TrainConfig,
    /// Rows in lexicographic order of candidate indices.
    pub rows: Vec<OracleRow>,
    /// Row index of the smallest feasible assignment, if any is feasible.
    pub optimum: Option<usize>,
}

impl OracleResult {
    pub fn optimum_row(&self) -> Option<&OracleRow> {
        self.optimum.map(|i| &self.rows[i])
    }

    pub fn row_for(&self, indices: &[usize]) -> Option<&OracleRow> {
        self.rows.iter().find(|r| r.assignment.indices() == indices)
    }

    /// Delimited result table with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("assignment,bits,compression,valid_loss,accuracy,feasible\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{}",
                r.assignment.label(),
                r.bits,
                r.compression,
                r.valid_loss,
                r.accuracy,
                r.feasible
            )
            .expect("writing to a string");
        }
        out
    }
}

/// Number of assignments, `|candidates|^layers`, or `None` on overflow.
pub fn space_size(layers: usize, candidates: usize) -> Option<u128> {
    u32::try_from(layers).ok().and_then(|l| (candidates as u128).checked_pow(l))
}

/// Enumerates, fine-tunes and scores every assignment of `candidates` to the
/// layers of the float network `base`.
#[allow(clippy::too_many_arguments)]
pub fn exhaustive_search(
    base: &Network,
    candidates: &[QuantCandidate],
    theta: f64,
    train_set: &Dataset,
    valid_set: &Dataset,
    cfg: &OracleConfig,
    seed: u64,
) -> Result<OracleResult> {
    if base.is_relaxed() {
        return Err(Error::InvalidArgument {
            op: "exhaustive_search",
            reason: "expects a float or fixed-precision network".into(),
        });
    }
    if candidates.is_empty() {
        return Err(Error::InvalidArgument {
            op: "exhaustive_search",
            reason: "empty candidate list".into(),
        });
    }
    valid_set.expect_split(Split::Valid)?;
    let layers = base.layers.len();
    let size = space_size(layers, candidates.len()).unwrap_or(u128::MAX);
    if size > cfg.cap as u128 {
        return Err(Error::SearchSpaceOverflow { size, cap: cfg.cap });
    }
    let specs = base.specs();
    let mut rows = Vec::with_capacity(size as usize);
    let mut indices = vec![0usize; layers];
    for _ in 0..size {
        let assignment = Assignment::from_indices(&specs, candidates, &indices)?;
        let mut net = apply_assignment(base, &assignment)?;
        fine_tune(&mut net, train_set, &cfg.budget, seed)?;
        let m = evaluate(&net, None, valid_set)?;
        log::info!("oracle {}: valid loss {:.4}, accuracy {:.4}", assignment.label(), m.loss, m.accuracy);
        rows.push(OracleRow {
            bits: assignment.total_bits(),
            compression: assignment.compression_rate(),
            valid_loss: m.loss,
            accuracy: m.accuracy,
            feasible: m.loss <= theta,
            assignment,
        });
        // Odometer increment, last layer fastest.
        for d in (0..layers).rev() {
            indices[d] += 1;
            if indices[d] < candidates.len() {
                break;
            }
            indices[d] = 0;
        }
    }
    // Rows are already lexicographic, so the first minimum wins ties.
    let optimum = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.feasible)
        .min_by_key(|(_, r)| r.bits)
        .map(|(i, _)| i);
    Ok(OracleResult {
        theta,
        seed,
        candidates: candidates.to_vec(),
        budget: cfg.budget.clone(),
        rows,
        optimum,
    })
}

/// How a searched assignment fares against the enumeration.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    /// Whether the found assignment meets the tolerance under the oracle's protocol.
    pub feasible: bool,
    pub found_bits: u64,
    pub optimal_bits: Option<u64>,
    /// `found_bits / optimal_bits`; `None` when nothing is feasible.
    pub size_ratio: Option<f64>,
}

pub fn compare(oracle: &OracleResult, found: &Assignment) -> Result<Comparison> {
    let row = oracle.row_for(&found.indices()).ok_or_else(|| {
        Error::ConfigMismatch(format!("assignment {} is not in the enumerated space", found.label()))
    })?;
    if row.assignment != *found {
        return Err(Error::ConfigMismatch(format!(
            "assignment {} uses different layers or candidates than the oracle",
            found.label()
        )));
    }
    let optimal_bits = oracle.optimum_row().map(|r| r.bits);
    Ok(Comparison {
        feasible: row.feasible,
        found_bits: row.bits,
        optimal_bits,
        size_ratio: optimal_bits.map(|b| row.bits as f64 / b as f64),
    })
}
