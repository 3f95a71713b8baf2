//! Prompt-masked autoregressive cross-entropy.
//!
//! Fine-tuning scores only the generated tokens: positions whose mask flag is
//! false (the user prompt) contribute nothing to the loss or the gradient.
//! Softmax terms go through a shifted log-sum-exp so large logits stay finite.

use thiserror::Error;

use super::matrix::Matrix;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("no unmasked completion positions")]
    AllMasked,
    #[error("batch shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("target id {id} at position {pos} outside vocabulary of {vocab}")]
    TargetOutOfRange { pos: usize, id: usize, vocab: usize },
}

/// One scoring batch: T×V logits, T target ids, and a T-length mask where
/// true marks a completion token.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub logits: Matrix,
    pub target_ids: Vec<usize>,
    pub loss_mask: Vec<bool>,
}

impl TokenBatch {
    fn check(&self) -> Result<(), LossError> {
        let t = self.logits.rows();
        let v = self.logits.cols();
        if self.target_ids.len() != t || self.loss_mask.len() != t {
            return Err(LossError::ShapeMismatch(format!(
                "logits have {} rows but {} targets / {} mask flags",
                t,
                self.target_ids.len(),
                self.loss_mask.len()
            )));
        }
        for (pos, &id) in self.target_ids.iter().enumerate() {
            if id >= v {
                return Err(LossError::TargetOutOfRange { pos, id, vocab: v });
            }
        }
        if !self.loss_mask.iter().any(|&m| m) {
            return Err(LossError::AllMasked);
        }
        Ok(())
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Mean over unmasked positions of −log softmax(logits[t])[target[t]].
pub fn masked_cross_entropy(batch: &TokenBatch) -> Result<f64, LossError> {
    batch.check()?;
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 0..batch.logits.rows() {
        if !batch.loss_mask[t] {
            continue;
        }
        let row = batch.logits.row(t);
        total += log_sum_exp(row) - row[batch.target_ids[t]];
        count += 1;
    }
    Ok(total / count as f64)
}

/// Gradient of [`masked_cross_entropy`] with respect to the logits:
/// (softmax − onehot)/m on unmasked rows, zero rows elsewhere, where m is the
/// number of unmasked positions.
pub fn cross_entropy_grad(batch: &TokenBatch) -> Result<Matrix, LossError> {
    batch.check()?;
    let m = batch.loss_mask.iter().filter(|&&b| b).count() as f64;
    let mut grad = Matrix::zeros(batch.logits.rows(), batch.logits.cols());
    for t in 0..batch.logits.rows() {
        if !batch.loss_mask[t] {
            continue;
        }
        let row = batch.logits.row(t);
        let lse = log_sum_exp(row);
        for v in 0..batch.logits.cols() {
            let softmax = (row[v] - lse).exp();
            let onehot = if v == batch.target_ids[t] { 1.0 } else { 0.0 };
            grad[(t, v)] = (softmax - onehot) / m;
        }
    }
    Ok(grad)
}
