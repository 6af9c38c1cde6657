use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Weighted classification metrics; `confusion[t][p]` counts true class `t`
/// predicted as `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub per_sample_seconds: f64,
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn from_predictions(labels: &[usize], predictions: &[usize], classes: usize) -> Result<Self> {
        if labels.len() != predictions.len() {
            return contract(format!(
                "{} labels but {} predictions",
                labels.len(),
                predictions.len()
            ));
        }
        if let Some(&bad) = labels.iter().chain(predictions).find(|&&c| c >= classes) {
            return contract(format!("class id {bad} outside 0..{classes}"));
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&t, &p) in labels.iter().zip(predictions) {
            confusion[t][p] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    /// Support-weighted precision, recall and F1; a class with no predicted
    /// (or no true) members contributes zero to the affected score.
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let c = confusion.len();
        let total: usize = confusion.iter().flatten().sum();
        let trace: usize = (0..c).map(|i| confusion[i][i]).sum();
        let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
        if total > 0 {
            for i in 0..c {
                let support: usize = confusion[i].iter().sum();
                let predicted: usize = confusion.iter().map(|row| row[i]).sum();
                let tp = confusion[i][i] as f64;
                let p = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
                let r = if support > 0 { tp / support as f64 } else { 0.0 };
                let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
                let w = support as f64 / total as f64;
                precision += w * p;
                recall += w * r;
                f1 += w * f;
            }
        }
        Self {
            precision,
            recall,
            f1,
            accuracy: if total > 0 { trace as f64 / total as f64 } else { 0.0 },
            per_sample_seconds: 0.0,
            confusion,
        }
    }

    /// Same metrics with the timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            per_sample_seconds: 0.0,
            ..self.clone()
        }
    }
}
