//! Evaluation metrics for ordered-class prediction.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Exact-match and within-one-class accuracies.
pub fn aem_aeo(predicted: &[usize], truth: &[usize]) -> Result<(f64, f64)> {
    check_len("aem_aeo", truth.len(), predicted.len())?;
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty prediction set".into()));
    }
    let n = truth.len() as f64;
    let exact = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    let within_one = predicted.iter().zip(truth).filter(|(p, t)| p.abs_diff(**t) <= 1).count();
    Ok((exact as f64 / n, within_one as f64 / n))
}

/// Argmax, ties toward the smaller index.
pub fn predict_class(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// `Σ_i p_i · centers_i`.
pub fn expected_score(p: &[f64], bin_centers: &[f64]) -> Result<f64> {
    check_len("expected_score", bin_centers.len(), p.len())?;
    Ok(p.iter().zip(bin_centers).map(|(a, b)| a * b).sum())
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation with average ranks for ties.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len("spearman_rho", x.len(), y.len())?;
    if x.is_empty() {
        return Err(Error::UndefinedMetric("rank correlation of empty input".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| Error::UndefinedMetric("rank correlation with a constant input".into()))
}

/// One evaluation event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aem: f64,
    pub aeo: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spearman_rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sdd: Option<f64>,
    /// `per_class_confusion[truth][prediction]`.
    pub per_class_confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn from_predictions(predicted: &[usize], truth: &[usize], num_classes: usize) -> Result<Self> {
        let (aem, aeo) = aem_aeo(predicted, truth)?;
        let mut confusion = vec![vec![0u64; num_classes]; num_classes];
        for (&p, &t) in predicted.iter().zip(truth) {
            if p >= num_classes || t >= num_classes {
                return Err(Error::InvalidInput(format!(
                    "class index out of range for {num_classes} classes"
                )));
            }
            confusion[t][p] += 1;
        }
        Ok(EvalReport {
            aem,
            aeo,
            spearman_rho: None,
            sdd: None,
            per_class_confusion: confusion,
        })
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        serde_json::to_writer(&mut out, self)?;
        writeln!(out).map_err(|e| Error::io("<jsonl>", e))?;
        Ok(())
    }
}

/// Parses a JSON-lines stream of reports, skipping blank lines.
pub fn read_reports_jsonl(input: impl BufRead) -> Result<Vec<EvalReport>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
