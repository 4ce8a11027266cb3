use serde::{Deserialize, Serialize};

use crate::error::{KaaError, Result};

/// Metrics of one evaluation. Fields a task does not produce are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub roc_auc: Option<f64>,
    pub mae: Option<f64>,
    pub loss_curve: Vec<f64>,
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(KaaError::Parameter(format!(
            "{} predictions for {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(KaaError::Parameter("accuracy of an empty set".into()));
    }
    let correct = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Mann-Whitney estimate of `P(pos > neg)`, counting ties as one half.
pub fn roc_auc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(KaaError::Parameter(
            "ROC-AUC needs at least one positive and one negative score".into(),
        ));
    }
    if positive.iter().chain(negative).any(|s| s.is_nan()) {
        return Err(KaaError::Parameter("ROC-AUC of a NaN score".into()));
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // average 1-based ranks over runs of equal scores
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (positive.len() as f64, negative.len() as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}
