use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax followed by cross-entropy on class indices.
    CrossEntropy,
    /// Sum of squared errors per sample against ±1 targets, averaged over the batch.
    Mse,
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Tensor {
    let k = logits.row_len();
    let mut out = Vec::with_capacity(logits.len());
    for i in 0..logits.batch() {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / z));
    }
    debug_assert_eq!(out.len(), logits.batch() * k);
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}

/// Mean over the batch of `-log p(correct)`; gradient `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = match logits.shape() {
        [n, k] => (*n, *k),
        s => return Err(Error::Shape(format!("logits must be [batch, classes], got {s:?}"))),
    };
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!("label {bad} out of range for {k} classes")));
    }
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += log_z - row[label];
        grad.data_mut()[i * k + label] -= 1.0;
    }
    let inv = 1.0 / n as f64;
    grad.data_mut().iter_mut().for_each(|g| *g *= inv);
    Ok((loss * inv, grad))
}

/// Mean over the batch of `Σ (y - t)²`; gradient `2 (y - t) / batch`.
pub fn mse_loss(outputs: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    if outputs.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "outputs {:?} vs targets {:?}",
            outputs.shape(),
            targets.shape()
        )));
    }
    let inv = 1.0 / outputs.batch() as f64;
    let loss = outputs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(y, t)| (y - t) * (y - t))
        .sum::<f64>()
        * inv;
    let grad = outputs.zip_map(targets, |y, t| 2.0 * (y - t) * inv)?;
    Ok((loss, grad))
}
