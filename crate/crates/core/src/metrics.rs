//! Evaluation metrics and SOH definitions.
//!
//! Accuracy metrics are computed on denormalized SOH fractions (0-1).

use std::fmt::Write as _;

use crate::{Error, Result};

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Metric("empty input".into()));
    }
    if pred.len() != target.len() {
        return Err(Error::Metric(format!(
            "length mismatch: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    let mse = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Mean absolute percentage error, in percent.
pub fn mape(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    if let Some(i) = target.iter().position(|&t| t == 0.0) {
        return Err(Error::Metric(format!("zero target at index {i}; MAPE undefined")));
    }
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| ((p - t) / t).abs())
        .sum();
    Ok(100.0 * s / pred.len() as f64)
}

/// Percent reduction of `new_rmse` relative to `base_rmse`.
pub fn error_reduction(new_rmse: f64, base_rmse: f64) -> Result<f64> {
    if !(base_rmse > 0.0) {
        return Err(Error::Metric(format!("baseline RMSE must be positive, got {base_rmse}")));
    }
    Ok(100.0 * (1.0 - new_rmse / base_rmse))
}

/// `C_t / C_nominal`.
pub fn soh_from_capacity(capacity: f64, nominal: f64) -> Result<f64> {
    if !(nominal > 0.0) {
        return Err(Error::Metric(format!("nominal capacity must be positive, got {nominal}")));
    }
    Ok(capacity / nominal)
}

/// `Q_out / Q_in`, the charge-throughput form.
pub fn soh_from_throughput(q_out: f64, q_in: f64) -> Result<f64> {
    if !(q_in > 0.0) {
        return Err(Error::Metric(format!("charge input must be positive, got {q_in}")));
    }
    Ok(q_out / q_in)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rmse: f64,
    /// Percent.
    pub mape: f64,
    /// Percent, when a baseline RMSE was supplied.
    pub error_reduction_vs_baseline: Option<f64>,
    pub execution_time_s: f64,
    pub n_samples: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "rmse,mape_pct,error_reduction_pct,execution_time_s,n_samples";

    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "rmse={}", self.rmse).unwrap();
        writeln!(s, "mape_pct={}", self.mape).unwrap();
        if let Some(r) = self.error_reduction_vs_baseline {
            writeln!(s, "error_reduction_pct={r}").unwrap();
        }
        writeln!(s, "execution_time_s={}", self.execution_time_s).unwrap();
        writeln!(s, "n_samples={}", self.n_samples).unwrap();
        s
    }

    /// One row matching [`CSV_HEADER`](Self::CSV_HEADER); a missing error
    /// reduction is an empty field.
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.rmse,
            self.mape,
            self.error_reduction_vs_baseline
                .map(|r| r.to_string())
                .unwrap_or_default(),
            self.execution_time_s,
            self.n_samples
        )
    }
}
