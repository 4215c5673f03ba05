use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground_distance::DistanceEstimate;

pub const HISTORY_HEADER: [&str; 8] = [
    "epoch",
    "loss_XE_component",
    "loss_reg_component",
    "lambda",
    "train_AEM",
    "test_AEM",
    "test_AEO",
    "SDD",
];

/// Per-epoch means and metrics. Loss components are averaged over the
/// epoch's training forward passes.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss_xe: f64,
    pub loss_reg: f64,
    pub lambda: f64,
    pub train_aem: f64,
    pub test_aem: Option<f64>,
    pub test_aeo: Option<f64>,
    pub sdd: Option<f64>,
}

impl EpochRecord {
    pub fn total_loss(&self) -> f64 {
        self.loss_xe + self.loss_reg
    }
}

/// How λ was chosen after jump-start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaCalibration {
    /// 0-based epoch whose training used λ first.
    pub epoch: usize,
    pub mean_xe: f64,
    /// Mean of `Σ p_i² (D_ik^ω + μ)` (λ = 1) over the preceding epoch's predictions.
    pub mean_unit_reg: f64,
    pub lambda: f64,
}

impl LambdaCalibration {
    /// `mean_xe / (λ · |mean_unit_reg|)`.
    pub fn ratio(&self) -> f64 {
        self.mean_xe / (self.lambda * self.mean_unit_reg.abs())
    }
}

#[derive(Clone, Debug, Default)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub calibration: Option<LambdaCalibration>,
    /// Ground-distance estimate from the final epoch's features.
    pub last_estimate: Option<DistanceEstimate>,
    pub skipped_features: u64,
    pub warnings: Vec<String>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders records as CSV with [`HISTORY_HEADER`]; missing values are empty.
pub fn history_csv(records: &[EpochRecord]) -> String {
    let mut out = HISTORY_HEADER.join(",");
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.loss_xe,
            r.loss_reg,
            r.lambda,
            r.train_aem,
            opt(r.test_aem),
            opt(r.test_aeo),
            opt(r.sdd)
        ));
    }
    out
}

pub fn write_history(path: &Path, records: &[EpochRecord]) -> Result<()> {
    std::fs::write(path, history_csv(records)).map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != HISTORY_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected history header {header:?}"),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let num = |i: usize| -> Result<f64> { record[i].parse().map_err(|e| err(format!("column {i}: {e}"))) };
        let opt_num = |i: usize| -> Result<Option<f64>> {
            if record[i].is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        out.push(EpochRecord {
            epoch: record[0].parse().map_err(|e| err(format!("epoch: {e}")))?,
            loss_xe: num(1)?,
            loss_reg: num(2)?,
            lambda: num(3)?,
            train_aem: num(4)?,
            test_aem: opt_num(5)?,
            test_aeo: opt_num(6)?,
            sdd: opt_num(7)?,
        });
    }
    Ok(out)
}
