//! Comma-separated report emitters: scheme comparison table, accuracy versus
//! compression curve, per-layer memory, search trajectory and assignment.
//!
//! Every file has a header row, uses `.` as the decimal separator and fixed
//! precision, and carries no timestamps, so identical runs give identical bytes.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn::layer::LayerSpec;
use crate::quant::FLOAT_BITS;
use crate::search::{Assignment, SearchState};

fn line(out: &mut String, cells: &[String]) {
    writeln!(out, "{}", cells.join(",")).expect("writing to a string");
}

/// One row of the scheme comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemeRow {
    pub scheme: String,
    pub compression: f64,
    /// Test accuracy in percent.
    pub accuracy: f64,
}

pub fn schemes_csv(rows: &[SchemeRow]) -> String {
    let mut out = String::from("scheme,compression,accuracy_pct\n");
    for r in rows {
        line(&mut out, &[r.scheme.clone(), format!("{:.4}", r.compression), format!("{:.2}", r.accuracy)]);
    }
    out
}

/// One point of the accuracy/compression trade-off.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    /// Loss tolerance of a searched point; `None` for uniform reference points.
    pub theta: Option<f64>,
    pub label: String,
    pub compression: f64,
    pub accuracy: f64,
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("kind,theta,label,compression,accuracy_pct\n");
    for r in rows {
        let (kind, theta) = match r.theta {
            Some(t) => ("searched", format!("{t:.6}")),
            None => ("reference", String::new()),
        };
        line(
            &mut out,
            &[kind.into(), theta, r.label.clone(), format!("{:.4}", r.compression), format!("{:.2}", r.accuracy)],
        );
    }
    out
}

/// Payload of one layer before (float) and after quantization.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMemoryRow {
    pub name: String,
    pub params: usize,
    pub bits_per_weight: u32,
    pub bits_before: u64,
    pub bits_after: u64,
}

impl LayerMemoryRow {
    pub fn bytes_before(&self) -> f64 {
        self.bits_before as f64 / 8.0
    }

    pub fn bytes_after(&self) -> f64 {
        self.bits_after as f64 / 8.0
    }
}

/// Per-layer rows for `assignment`, checked against the network's layer table.
pub fn layer_memory(specs: &[LayerSpec], assignment: &Assignment) -> Result<Vec<LayerMemoryRow>> {
    if specs.len() != assignment.layers.len() {
        return Err(Error::Coverage(format!(
            "assignment covers {} of {} quantizable layers",
            assignment.layers.len(),
            specs.len()
        )));
    }
    specs
        .iter()
        .zip(&assignment.layers)
        .map(|(spec, a)| {
            if spec.name != a.name || spec.param_count() != a.params {
                return Err(Error::Coverage(format!("layer {} has no matching assignment entry (found {})", spec.name, a.name)));
            }
            Ok(LayerMemoryRow {
                name: spec.name.clone(),
                params: a.params,
                bits_per_weight: a.candidate.bits,
                bits_before: FLOAT_BITS as u64 * a.params as u64,
                bits_after: a.bits(),
            })
        })
        .collect()
}

/// Layer rows followed by a totals row and the overall compression rate.
pub fn layer_memory_csv(rows: &[LayerMemoryRow]) -> String {
    let mut out = String::from("layer,params,bits_per_weight,bits_before,bits_after,bytes_before,bytes_after,compression\n");
    let mut params = 0;
    let mut before = 0;
    let mut after = 0;
    for r in rows {
        params += r.params;
        before += r.bits_before;
        after += r.bits_after;
        line(
            &mut out,
            &[
                r.name.clone(),
                r.params.to_string(),
                r.bits_per_weight.to_string(),
                r.bits_before.to_string(),
                r.bits_after.to_string(),
                format!("{:.3}", r.bytes_before()),
                format!("{:.3}", r.bytes_after()),
                format!("{:.4}", r.bits_before as f64 / r.bits_after as f64),
            ],
        );
    }
    line(
        &mut out,
        &[
            "total".into(),
            params.to_string(),
            String::new(),
            before.to_string(),
            after.to_string(),
            format!("{:.3}", before as f64 / 8.0),
            format!("{:.3}", after as f64 / 8.0),
            format!("{:.4}", before as f64 / after as f64),
        ],
    );
    out
}

pub fn assignment_csv(assignment: &Assignment) -> String {
    let mut out = String::from("layer,name,params,bits,quantizer\n");
    for (i, l) in assignment.layers.iter().enumerate() {
        line(
            &mut out,
            &[i.to_string(), l.name.clone(), l.params.to_string(), l.candidate.bits.to_string(), l.candidate.label()],
        );
    }
    out
}

/// One line per outer iteration; per-layer probabilities follow as `p<layer>_<candidate>`.
pub fn trajectory_csv(state: &SearchState) -> String {
    let mut out = String::from("iteration,train_loss,valid_loss,lambda,expected_size_bits");
    if let Some(first) = state.trajectory.first() {
        for (i, row) in first.probabilities.iter().enumerate() {
            for j in 0..row.len() {
                write!(out, ",p{i}_{j}").expect("writing to a string");
            }
        }
    }
    out.push('\n');
    for r in &state.trajectory {
        let mut cells = vec![
            r.iteration.to_string(),
            format!("{:.6}", r.train_loss),
            format!("{:.6}", r.valid_loss),
            format!("{}", r.lambda),
            format!("{:.3}", r.expected_size_bits),
        ];
        cells.extend(r.probabilities.iter().flatten().map(|p| format!("{p:.6}")));
        line(&mut out, &cells);
    }
    out
}

/// Everything a finished search reports.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    /// The configuration the run used, as TOML.
    pub config: String,
    pub schemes: Vec<SchemeRow>,
    pub layers: Vec<LayerMemoryRow>,
    /// File name of the trajectory log inside the output directory.
    pub trajectory: String,
}
