//! Softmax cross-entropy over logits, with optional label smoothing.
//! Computed in f64 with max-shifted log-sum-exp.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One-hot encode labels into an `N x C` tensor.
pub fn one_hot<T: Scalar>(labels: &[usize], num_classes: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(&[labels.len(), num_classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::InvalidParam(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        t.set(&[i, l], T::one());
    }
    Ok(t)
}

fn validate_targets<T: Scalar>(y: &Tensor<T>, targets: &Tensor<T>) -> Result<(usize, usize)> {
    if y.rank() != 2 || y.shape() != targets.shape() {
        return Err(Error::ShapeMismatch(format!(
            "logits {:?} vs targets {:?}",
            y.shape(),
            targets.shape()
        )));
    }
    let (n, c) = (y.shape()[0], y.shape()[1]);
    for i in 0..n {
        let mut ones = 0;
        for j in 0..c {
            let v = targets.at(&[i, j]);
            if v == T::one() {
                ones += 1;
            } else if v != T::zero() {
                return Err(Error::InvalidParam(format!(
                    "target row {i} is not one-hot (entry {v})"
                )));
            }
        }
        if ones != 1 {
            return Err(Error::InvalidParam(format!(
                "target row {i} has {ones} ones"
            )));
        }
    }
    Ok((n, c))
}

fn row_log_probs<T: Scalar>(y: &Tensor<T>, i: usize, c: usize) -> Vec<f64> {
    let row: Vec<f64> = (0..c).map(|j| y.at(&[i, j]).as_f64()).collect();
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row.into_iter().map(|v| v - lse).collect()
}

/// Mean softmax cross-entropy against one-hot targets.
pub fn softmax_xent<T: Scalar>(y: &Tensor<T>, targets: &Tensor<T>) -> Result<f64> {
    smoothed_xent(y, targets, 0.0)
}

/// Label-smoothed cross-entropy: targets become `t (1 - eps) + eps / C`.
pub fn smoothed_xent<T: Scalar>(y: &Tensor<T>, targets: &Tensor<T>, eps: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidParam(format!(
            "label smoothing must be in [0, 1), got {eps}"
        )));
    }
    let (n, c) = validate_targets(y, targets)?;
    let mut loss = 0.0;
    for i in 0..n {
        let logp = row_log_probs(y, i, c);
        for j in 0..c {
            let t = targets.at(&[i, j]).as_f64() * (1.0 - eps) + eps / c as f64;
            loss -= t * logp[j];
        }
    }
    Ok(loss / n as f64)
}

/// Gradient of [`smoothed_xent`] at the logits: `(softmax - t_smoothed) / N`.
pub fn smoothed_xent_grad<T: Scalar>(
    y: &Tensor<T>,
    targets: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidParam(format!(
            "label smoothing must be in [0, 1), got {eps}"
        )));
    }
    let (n, c) = validate_targets(y, targets)?;
    let mut grad = Tensor::zeros(&[n, c]);
    for i in 0..n {
        let logp = row_log_probs(y, i, c);
        for j in 0..c {
            let t = targets.at(&[i, j]).as_f64() * (1.0 - eps) + eps / c as f64;
            grad.set(&[i, j], T::from_f64((logp[j].exp() - t) / n as f64));
        }
    }
    Ok(grad)
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy<T: Scalar>(y: &Tensor<T>, labels: &[usize]) -> f64 {
    let (n, c) = (y.shape()[0], y.shape()[1]);
    let mut hits = 0usize;
    for i in 0..n {
        let mut best = 0;
        for j in 1..c {
            if y.at(&[i, j]) > y.at(&[i, best]) {
                best = j;
            }
        }
        if best == labels[i] {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}
