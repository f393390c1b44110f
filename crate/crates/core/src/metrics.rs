//! Binary F1, concordance correlation and five-fold aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CCC_EPS: f64 = 1e-12;
pub const FOLDS: usize = 5;

/// Predicts 1 iff `prob >= threshold`; `F1 = 2TP / (2TP + FP + FN)`,
/// 0 when the denominator is 0.
pub fn f1_binary(probs: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::contract(format!(
            "f1 needs equal nonempty inputs, got {} probs and {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    Ok(if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    })
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Lin's concordance correlation with population moments.
pub fn ccc(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.len() < 2 {
        return Err(Error::contract(format!(
            "ccc needs equal lengths >= 2, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let (mx, my) = (mean(pred), mean(target));
    let n = pred.len() as f64;
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in pred.iter().zip(target) {
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
        cov += (x - mx) * (y - my);
    }
    let (vx, vy, cov) = (vx / n, vy / n, cov / n);
    Ok(2.0 * cov / (vx + vy + (mx - my) * (mx - my) + CCC_EPS))
}

/// CCC per output dimension, averaged. Rows are samples.
pub fn ccc_multi(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
    let dims = pred.first().map(Vec::len).unwrap_or(0);
    if dims == 0 || pred.len() != target.len() {
        return Err(Error::contract("ccc_multi needs matching nonempty inputs"));
    }
    if pred.iter().chain(target).any(|r| r.len() != dims) {
        return Err(Error::contract("ccc_multi rows have inconsistent widths"));
    }
    let mut total = 0.0;
    for d in 0..dims {
        let p: Vec<f64> = pred.iter().map(|r| r[d]).collect();
        let t: Vec<f64> = target.iter().map(|r| r[d]).collect();
        total += ccc(&p, &t)?;
    }
    Ok(total / dims as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub metric: String,
    pub folds: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn aggregate_folds(scores: &[f64], metric: &str) -> Result<FoldReport> {
    if scores.len() != FOLDS {
        return Err(Error::contract(format!(
            "expected {FOLDS} fold scores, got {}",
            scores.len()
        )));
    }
    let m = mean(scores);
    let var = scores.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / FOLDS as f64;
    Ok(FoldReport {
        metric: metric.to_string(),
        folds: scores.to_vec(),
        mean: m,
        std: var.sqrt(),
    })
}

impl FoldReport {
    pub fn table_header() -> String {
        let mut s = format!("{:<16}", "metric");
        for i in 1..=FOLDS {
            s.push_str(&format!(" {:>8}", format!("fold{i}")));
        }
        s.push_str(&format!(" {:>9} {:>8}", "mean", "std"));
        s
    }

    pub fn table_row(&self, label: &str) -> String {
        let mut s = format!("{label:<16}");
        for f in &self.folds {
            s.push_str(&format!(" {f:>8.4}"));
        }
        s.push_str(&format!(" {:>9.5} {:>8.5}", self.mean, self.std));
        s
    }
}
