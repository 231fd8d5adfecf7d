//! Classification metrics.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// F1 = 2PR/(P+R), or 0 when P + R = 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

impl ClassMetrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |a: u64, b: u64| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
        let precision = ratio(tp, fp);
        let recall = ratio(tp, fn_);
        Self {
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    /// confusion[true][predicted].
    pub confusion: Vec<Vec<u64>>,
}

impl Evaluation {
    pub fn from_predictions(predictions: &[usize], labels: &[usize], num_classes: usize) -> Self {
        assert_eq!(predictions.len(), labels.len(), "one prediction per label");
        let mut confusion = vec![vec![0u64; num_classes]; num_classes];
        for (&p, &t) in predictions.iter().zip(labels) {
            confusion[t][p] += 1;
        }
        let total = labels.len() as u64;
        let correct: u64 = (0..num_classes).map(|c| confusion[c][c]).sum();
        let per_class: Vec<ClassMetrics> = (0..num_classes)
            .map(|c| {
                let tp = confusion[c][c];
                let fp = (0..num_classes).map(|t| confusion[t][c]).sum::<u64>() - tp;
                let fn_ = confusion[c].iter().sum::<u64>() - tp;
                ClassMetrics::from_counts(tp, fp, fn_)
            })
            .collect();
        let macro_f1 = if num_classes == 0 {
            0.0
        } else {
            per_class.iter().map(|m| m.f1).sum::<f64>() / num_classes as f64
        };
        Self {
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            per_class,
            macro_f1,
            confusion,
        }
    }

    /// Micro-averaged (precision, recall) from the pooled counts.
    pub fn micro(&self) -> (f64, f64) {
        let k = self.confusion.len();
        let tp: u64 = (0..k).map(|c| self.confusion[c][c]).sum();
        let all: u64 = self.confusion.iter().flatten().sum();
        let fp = all - tp;
        let m = ClassMetrics::from_counts(tp, fp, fp);
        (m.precision, m.recall)
    }
}

/// Index of the largest value in each row of `k` logits; ties go to the
/// lowest index.
pub fn argmax_rows(logits: &[f64], k: usize) -> Vec<usize> {
    logits
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
