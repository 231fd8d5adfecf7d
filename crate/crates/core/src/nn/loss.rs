//! Softmax cross-entropy over (N, K, 1, 1) logits.

use crate::autodiff::{Op, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of an (N, K) matrix stored row-major, using
/// max-subtraction.
pub fn softmax_rows(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / z));
    }
    out
}

impl<'t> Var<'t> {
    /// Mean over the batch of −log softmax(logits)[label].
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let s = x.shape();
        if s.h != 1 || s.w != 1 {
            return shape_err(format!("logits must be (N,K,1,1), got {s}"));
        }
        if labels.len() != s.n {
            return shape_err(format!("{} labels for a batch of {}", labels.len(), s.n));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= s.c) {
            return Err(Error::Data(format!("label {bad} out of range for {} classes", s.c)));
        }
        let k = s.c;
        let mut total = 0.0;
        for (row, &label) in x.data().chunks(k).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        let probs = softmax_rows(x.data(), k);
        let loss = Tensor::scalar(total / s.n as f64);
        let op = Op::SoftmaxCrossEntropy {
            logits: self.id,
            probs,
            labels: labels.to_vec(),
        };
        Ok(self.record(loss, op, &[*self]))
    }
}

pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let tape = Tape::new();
    tape.leaf(logits.clone()).softmax_cross_entropy(labels)?.item()
}
