//! Softmax cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean cross-entropy of a batch together with its top-1 hit count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub mean_loss: f64,
    pub correct_count: usize,
    pub total_count: usize,
}

impl LossValue {
    pub fn accuracy(&self) -> f64 {
        if self.total_count == 0 {
            0.0
        } else {
            self.correct_count as f64 / self.total_count as f64
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn check_labels(labels: &[u8], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::validation(format!(
            "{} labels for a batch of {rows} samples",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::validation(format!(
            "label {bad} out of range [0, {}]",
            classes - 1
        )));
    }
    Ok(())
}

/// Summed per-sample cross-entropy, hit count, and per-sample logit
/// gradients `softmax(z_i) − onehot(y_i)`.
pub(crate) fn cross_entropy_parts(logits: &Tensor, labels: &[u8]) -> Result<(f64, usize, Tensor)> {
    let classes = logits.row_len();
    check_labels(labels, logits.rows(), classes)?;
    let mut grad = Tensor::zeros(logits.shape().to_vec());
    let mut total = 0.0;
    let mut correct = 0;
    for (i, &label) in labels.iter().enumerate() {
        let z = logits.row(i);
        let y = label as usize;
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|&v| (v - m).exp()).sum();
        // (m − z_y) ≥ 0 and ln(sum) ≥ 0, so the per-sample loss is never negative
        total += (m - z[y]) + sum.ln();
        if argmax(z) == y {
            correct += 1;
        }
        let g = grad.row_mut(i);
        for (gk, &zk) in g.iter_mut().zip(z) {
            *gk = (zk - m).exp() / sum;
        }
        g[y] -= 1.0;
    }
    Ok((total, correct, grad))
}

/// Mean cross-entropy over the batch plus the per-sample logit gradients,
/// i.e. the gradient of each sample's own loss (not divided by the batch
/// size).
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[u8]) -> Result<(LossValue, Tensor)> {
    let (total, correct, grad) = cross_entropy_parts(logits, labels)?;
    let n = labels.len();
    Ok((
        LossValue {
            mean_loss: total / n as f64,
            correct_count: correct,
            total_count: n,
        },
        grad,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_ten() {
        let logits = Tensor::zeros(vec![3, 10]);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss.mean_loss - 10f64.ln()).abs() < 1e-15);
        // all-equal logits predict class 0
        assert_eq!(loss.correct_count, 1);
    }

    #[test]
    fn rejects_out_of_range_label() {
        let logits = Tensor::zeros(vec![1, 10]);
        assert!(softmax_cross_entropy(&logits, &[10]).is_err());
        assert!(softmax_cross_entropy(&logits, &[1, 2]).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0; 10]), 0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&[1000.0, -1000.0, 3.0, 2.5]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
