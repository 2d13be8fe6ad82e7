//! RMSE and result tables.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SequenceMode;
use crate::model::CellKind;

/// Root mean squared error between paired predictions and observations.
/// Predictions are used as given, without rounding or clipping.
pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::Empty("rmse input"));
    }
    if predicted.len() != actual.len() {
        return Err(Error::ShapeMismatch {
            op: "rmse",
            lhs: [predicted.len(), 1],
            rhs: [actual.len(), 1],
        });
    }
    let sq: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok(libm::sqrt(sq / predicted.len() as f64))
}

/// RMSE of predicting `value` for every observation.
pub fn constant_rmse(value: f64, actual: &[f64]) -> Result<f64> {
    let pred = alloc::vec![value; actual.len()];
    rmse(&pred, actual)
}

/// Mean and sample (n - 1) standard deviation. The deviation is `None` for a
/// single value.
pub fn mean_std(values: &[f64]) -> Result<(f64, Option<f64>)> {
    if values.is_empty() {
        return Err(Error::Empty("mean_std input"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, None));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, Some(libm::sqrt(var))))
}

/// Table label for a model variant. The dagger marks disjoint snapshots and
/// the double dagger incremental ones.
pub fn method_label(cell: CellKind, mode: SequenceMode) -> String {
    let mark = match mode {
        SequenceMode::Disjoint => "†",
        SequenceMode::Incremental => "‡",
        SequenceMode::Static => "",
    };
    match cell {
        CellKind::None => "GCMC (new split)".into(),
        CellKind::Gru => format!("GCMC-GRU{mark}"),
        CellKind::Lstm => format!("GCMC-LSTM{mark}"),
    }
}

pub const NO_SKILL_LABEL: &str = "Constant 3.0 (no skill)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub dataset: String,
    pub mode: String,
    pub rmse_mean: f64,
    pub rmse_std: Option<f64>,
    pub n_seeds: usize,
}

impl ReportRow {
    /// Aggregates per-seed RMSE values into one row.
    pub fn from_runs(method: String, dataset: String, mode: String, rmses: &[f64]) -> Result<Self> {
        let (rmse_mean, rmse_std) = mean_std(rmses)?;
        Ok(ReportRow {
            method,
            dataset,
            mode,
            rmse_mean,
            rmse_std,
            n_seeds: rmses.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

pub fn make_report(mut rows: Vec<ReportRow>) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(Error::Empty("report rows"));
    }
    for r in &rows {
        if !(r.rmse_mean >= 0.0) || r.rmse_std.is_some_and(|s| !(s >= 0.0)) {
            return Err(Error::InvalidArgument(format!("negative or NaN RMSE in row {}", r.method)));
        }
    }
    rows.sort_by(|a, b| (&a.dataset, &a.method).cmp(&(&b.dataset, &b.method)));
    Ok(EvalReport { rows })
}

impl EvalReport {
    pub fn row(&self, dataset: &str, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.dataset == dataset && r.method == method)
    }

    /// Aligned plain-text table, one section per dataset.
    pub fn render_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.method.chars().count())
            .chain(core::iter::once("method".len()))
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let mut current: Option<&str> = None;
        for r in &self.rows {
            if current != Some(r.dataset.as_str()) {
                if current.is_some() {
                    out.push('\n');
                }
                current = Some(r.dataset.as_str());
                let _ = writeln!(out, "[{}]", r.dataset);
                let _ = writeln!(out, "{:<width$}  {:<11}  {:>19}  {:>5}", "method", "mode", "rmse", "seeds");
            }
            let pad = width - r.method.chars().count();
            let value = match r.rmse_std {
                Some(s) => format!("{:.4} ± {:.4}", r.rmse_mean, s),
                None => format!("{:.4}", r.rmse_mean),
            };
            let _ = writeln!(
                out,
                "{}{}  {:<11}  {:>19}  {:>5}",
                r.method,
                " ".repeat(pad),
                r.mode,
                value,
                r.n_seeds
            );
        }
        out
    }
}
