//! Evaluation metrics: confusion matrix, per-class and macro F1,
//! multiclass logloss, and accuracy.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Rows are true classes, columns predicted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn at(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.at(c, c)).sum()
    }

    /// Tracks with true class `c`.
    pub fn support(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.at(c, p)).sum()
    }
}

pub fn confusion_matrix(preds: &[usize], truth: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truth.len() {
        return Err(Error::Shape {
            op: "confusion_matrix",
            detail: format!("{} predictions vs {} labels", preds.len(), truth.len()),
        });
    }
    let mut counts = vec![0u64; classes * classes];
    for (&p, &t) in preds.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::Param {
                op: "confusion_matrix",
                detail: format!("label ({t}, {p}) out of range for {classes} classes"),
            });
        }
        counts[t * classes + p] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

/// Per-class precision/recall/F1 with the 0/0 -> 0 convention, plus the
/// unweighted (macro) mean F1.
pub fn f1_scores(cm: &ConfusionMatrix) -> (Vec<f64>, f64) {
    let per_class: Vec<f64> = (0..cm.classes)
        .map(|c| {
            let tp = cm.at(c, c) as f64;
            let fp = (0..cm.classes).filter(|&t| t != c).map(|t| cm.at(t, c)).sum::<u64>() as f64;
            let fn_ = (0..cm.classes).filter(|&p| p != c).map(|p| cm.at(c, p)).sum::<u64>() as f64;
            let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
            let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .collect();
    let macro_f1 = per_class.iter().sum::<f64>() / cm.classes as f64;
    (per_class, macro_f1)
}

/// Mean negative log probability of the true class. Rows are
/// renormalized when within 1e-4 of summing to one and rejected
/// otherwise; probabilities are clamped at 1e-15.
pub fn logloss(probs: &[Vec<f64>], truth: &[usize]) -> Result<f64> {
    if probs.len() != truth.len() {
        return Err(Error::Shape {
            op: "logloss",
            detail: format!("{} rows vs {} labels", probs.len(), truth.len()),
        });
    }
    if probs.is_empty() {
        return Err(Error::Param {
            op: "logloss",
            detail: "no samples".into(),
        });
    }
    let mut total = 0.0;
    for (row, &t) in probs.iter().zip(truth) {
        if t >= row.len() {
            return Err(Error::Param {
                op: "logloss",
                detail: format!("label {t} out of range for {} classes", row.len()),
            });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(Error::Param {
                op: "logloss",
                detail: format!("probability row sums to {sum}, not renormalizable"),
            });
        }
        total -= (row[t] / sum).max(1e-15).ln();
    }
    Ok(total / truth.len() as f64)
}

pub fn accuracy(preds: &[usize], truth: &[usize]) -> Result<f64> {
    if preds.len() != truth.len() {
        return Err(Error::Shape {
            op: "accuracy",
            detail: format!("{} predictions vs {} labels", preds.len(), truth.len()),
        });
    }
    if preds.is_empty() {
        return Err(Error::Param {
            op: "accuracy",
            detail: "no samples".into(),
        });
    }
    let hits = preds.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Everything the eval command reports for one split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub labels: Vec<String>,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    pub support: Vec<u64>,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub logloss: f64,
}

impl MetricsReport {
    pub fn compute(
        labels: &[String],
        probs: &[Vec<f64>],
        preds: &[usize],
        truth: &[usize],
    ) -> Result<Self> {
        let classes = labels.len();
        let cm = confusion_matrix(preds, truth, classes)?;
        let (per_class_f1, macro_f1) = f1_scores(&cm);
        let mut per_class_precision = Vec::with_capacity(classes);
        let mut per_class_recall = Vec::with_capacity(classes);
        let mut support = Vec::with_capacity(classes);
        for c in 0..classes {
            let tp = cm.at(c, c) as f64;
            let pred_c: f64 = (0..classes).map(|t| cm.at(t, c)).sum::<u64>() as f64;
            let true_c = cm.support(c) as f64;
            per_class_precision.push(if pred_c == 0.0 { 0.0 } else { tp / pred_c });
            per_class_recall.push(if true_c == 0.0 { 0.0 } else { tp / true_c });
            support.push(cm.support(c));
        }
        Ok(Self {
            labels: labels.to_vec(),
            per_class_precision,
            per_class_recall,
            per_class_f1,
            support,
            macro_f1,
            accuracy: accuracy(preds, truth)?,
            logloss: logloss(probs, truth)?,
        })
    }

    /// Plain-text per-genre F1 table.
    pub fn f1_table(&self) -> String {
        let width = self.labels.iter().map(|l| l.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:width$}  F1-score\n", "Genre");
        for (label, f1) in self.labels.iter().zip(&self.per_class_f1) {
            out.push_str(&format!("{label:width$}  {f1:.3}\n"));
        }
        out.push_str(&format!("{:width$}  {:.3}\n", "macro", self.macro_f1));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn confusion_perfect_predictor_is_diagonal() {
        let truth = vec![0, 1, 1, 2, 2, 2];
        let cm = confusion_matrix(&truth, &truth, 3).unwrap();
        assert_eq!(cm.trace(), 6);
        assert_eq!(cm.at(2, 2), 3);
        assert_eq!(cm.at(0, 1), 0);
    }

    #[test]
    fn confusion_empty_is_zero() {
        let cm = confusion_matrix(&[], &[], 4).unwrap();
        assert_eq!(cm.total(), 0);
    }

    #[test]
    fn confusion_matches_counting_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let preds: Vec<usize> = (0..1000).map(|_| r.random_range(0..5)).collect();
        let truth: Vec<usize> = (0..1000).map(|_| r.random_range(0..5)).collect();
        let cm = confusion_matrix(&preds, &truth, 5).unwrap();
        for t in 0..5 {
            for p in 0..5 {
                let count = preds
                    .iter()
                    .zip(&truth)
                    .filter(|&(&pp, &tt)| pp == p && tt == t)
                    .count() as u64;
                assert_eq!(cm.at(t, p), count);
            }
        }
        assert_eq!(cm.total(), 1000);
    }

    #[test]
    fn confusion_length_mismatch_errors() {
        assert!(confusion_matrix(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn f1_perfect_diagonal_is_one() {
        let truth = vec![0, 0, 1, 2];
        let cm = confusion_matrix(&truth, &truth, 3).unwrap();
        let (per, macro_f1) = f1_scores(&cm);
        assert_eq!(per, vec![1.0, 1.0, 1.0]);
        assert_eq!(macro_f1, 1.0);
    }

    #[test]
    fn f1_hand_computed_binary_case() {
        // preds [1,1,0,0] vs truth [1,0,0,0]: class 1 P=0.5, R=1, F1=2/3.
        let cm = confusion_matrix(&[1, 1, 0, 0], &[1, 0, 0, 0], 2).unwrap();
        let (per, _) = f1_scores(&cm);
        assert!((per[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn f1_absent_class_is_zero_by_convention() {
        let cm = confusion_matrix(&[0, 0], &[0, 0], 3).unwrap();
        let (per, macro_f1) = f1_scores(&cm);
        assert_eq!(per[1], 0.0);
        assert_eq!(per[2], 0.0);
        assert!((macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn f1_macro_invariant_under_relabeling() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let preds: Vec<usize> = (0..300).map(|_| r.random_range(0..4)).collect();
        let truth: Vec<usize> = (0..300).map(|_| r.random_range(0..4)).collect();
        let perm = [2usize, 0, 3, 1];
        let (_, m1) = f1_scores(&confusion_matrix(&preds, &truth, 4).unwrap());
        let preds_p: Vec<usize> = preds.iter().map(|&p| perm[p]).collect();
        let truth_p: Vec<usize> = truth.iter().map(|&t| perm[t]).collect();
        let (_, m2) = f1_scores(&confusion_matrix(&preds_p, &truth_p, 4).unwrap());
        assert!((m1 - m2).abs() < 1e-12);
    }

    #[test]
    fn logloss_one_hot_is_zero() {
        let probs = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let loss = logloss(&probs, &[1, 0]).unwrap();
        assert!(loss.abs() < 1e-10);
    }

    #[test]
    fn logloss_uniform_is_ln_class_count() {
        let probs = vec![vec![1.0 / 16.0; 16]; 10];
        let truth: Vec<usize> = (0..10).map(|i| i % 16).collect();
        let loss = logloss(&probs, &truth).unwrap();
        assert!((loss - 16f64.ln()).abs() < 1e-9, "{loss}");
    }

    #[test]
    fn logloss_matches_summation_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let probs: Vec<Vec<f64>> = (0..50)
            .map(|_| {
                let raw: Vec<f64> = (0..6).map(|_| r.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let truth: Vec<usize> = (0..50).map(|_| r.random_range(0..6)).collect();
        let loss = logloss(&probs, &truth).unwrap();
        let oracle: f64 = probs
            .iter()
            .zip(&truth)
            .map(|(row, &t)| -row[t].ln())
            .sum::<f64>()
            / 50.0;
        assert!((loss - oracle).abs() < 1e-12);
    }

    #[test]
    fn accuracy_extremes_and_oracle() {
        assert_eq!(accuracy(&[1, 2], &[1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2], &[2, 1]).unwrap(), 0.0);
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let preds: Vec<usize> = (0..500).map(|_| r.random_range(0..3)).collect();
        let truth: Vec<usize> = (0..500).map(|_| r.random_range(0..3)).collect();
        let hits = preds.iter().zip(&truth).filter(|(p, t)| p == t).count();
        assert_eq!(
            accuracy(&preds, &truth).unwrap(),
            hits as f64 / 500.0
        );
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn accuracy_equals_trace_over_total() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let preds: Vec<usize> = (0..200).map(|_| r.random_range(0..4)).collect();
        let truth: Vec<usize> = (0..200).map(|_| r.random_range(0..4)).collect();
        let cm = confusion_matrix(&preds, &truth, 4).unwrap();
        let acc = accuracy(&preds, &truth).unwrap();
        assert_eq!(acc, cm.trace() as f64 / cm.total() as f64);
    }

    #[test]
    fn report_serializes_and_fields_in_range() {
        let labels = vec!["a".to_string(), "b".to_string()];
        let probs = vec![vec![0.7, 0.3], vec![0.2, 0.8], vec![0.6, 0.4]];
        let preds = vec![0, 1, 0];
        let truth = vec![0, 1, 1];
        let report = MetricsReport::compute(&labels, &probs, &preds, &truth).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert!(back.accuracy >= 0.0 && back.accuracy <= 1.0);
        assert!(back.macro_f1 >= 0.0 && back.macro_f1 <= 1.0);
        assert!(back.logloss >= 0.0);
        assert_eq!(back.support, vec![1, 2]);
        assert!(back.f1_table().contains("Genre"));
    }
}
