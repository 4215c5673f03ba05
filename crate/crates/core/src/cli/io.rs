//! CSV layouts emitted by the commands, each with a matching reader.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Formats `x` with `digits` significant digits in plain decimal notation.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{:.*}", digits.saturating_sub(1), x);
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    let text = format!("{x:.decimals$}");
    // rounding can carry into a new leading digit (9.9996 -> 10.000)
    let rounded: f64 = text.parse().unwrap_or(x);
    if rounded.abs().log10().floor() as i64 > magnitude && decimals > 0 {
        format!("{x:.prec$}", prec = decimals - 1)
    } else {
        text
    }
}

/// Square matrix with class labels as the header row and first column.
pub fn write_labeled_matrix(path: &Path, labels: &[String], m: &Matrix) -> Result<()> {
    if labels.len() != m.rows() || !m.is_square() {
        return Err(Error::InvalidInput(format!(
            "{} labels for a {}x{} matrix",
            labels.len(),
            m.rows(),
            m.cols()
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["class".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (i, label) in labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend(m.row(i).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labeled_matrix(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let labels: Vec<String> = reader.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.len() != labels.len() + 1 {
            return Err(err(format!("expected {} fields, got {}", labels.len() + 1, record.len())));
        }
        if labels.get(i).map(String::as_str) != Some(&record[0]) {
            return Err(err(format!("row label {:?} does not match the header", &record[0])));
        }
        let row = record
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().map_err(|e| err(format!("bad entry {f:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.len() != labels.len() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{} rows for {} column labels", rows.len(), labels.len()),
        });
    }
    Ok((labels, Matrix::from_rows(&rows)?))
}

pub fn class_labels(num_classes: usize) -> Vec<String> {
    (0..num_classes).map(|c| c.to_string()).collect()
}

/// Writes serializable rows with a header derived from the field names.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SddRow {
    pub statistic: String,
    pub value: f64,
}
