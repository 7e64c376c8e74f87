use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Numerically stable `log(sum(exp(x)))`.
pub fn log_sum_exp<T: Real>(logits: &[T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let sum: T = logits.iter().map(|v| (*v - max).exp()).sum();
    max + sum.ln()
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|v| (*v - lse).exp()).collect()
}

/// `-log softmax(logits)[target]` and its gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], target: usize) -> Result<(T, Vec<T>)> {
    if target >= logits.len() {
        return Err(Error::Dimension(format!(
            "target class {target} out of {} logits",
            logits.len()
        )));
    }
    let lse = log_sum_exp(logits);
    let loss = lse - logits[target];
    let mut grad: Vec<T> = logits.iter().map(|v| (*v - lse).exp()).collect();
    grad[target] = grad[target] - T::one();
    Ok((loss, grad))
}

fn check_labels<T>(logits: &ArrayView2<T>, labels: &[u8]) -> Result<()> {
    if logits.ncols() != 2 || logits.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "logits {:?} vs {} labels",
            logits.dim(),
            labels.len()
        )));
    }
    if labels.iter().any(|l| *l > 1) {
        return Err(Error::Parameter("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Mean per-point cross-entropy of two-class logits.
pub fn cross_entropy_per_point<T: Real>(logits: ArrayView2<T>, labels: &[u8]) -> Result<T> {
    Ok(cross_entropy_per_point_grad(logits, labels)?.0)
}

pub fn cross_entropy_per_point_grad<T: Real>(logits: ArrayView2<T>, labels: &[u8]) -> Result<(T, Array2<T>)> {
    check_labels(&logits, labels)?;
    if labels.is_empty() {
        return Ok((T::zero(), Array2::zeros((0, 2))));
    }
    let inv_n = T::one() / T::from_usize(labels.len()).expect("count fits");
    let mut total = T::zero();
    let mut grad = Array2::zeros(logits.dim());
    for (i, &label) in labels.iter().enumerate() {
        let row = [logits[[i, 0]], logits[[i, 1]]];
        let (loss, g) = softmax_cross_entropy(&row, label as usize)?;
        total = total + loss;
        grad[[i, 0]] = g[0] * inv_n;
        grad[[i, 1]] = g[1] * inv_n;
    }
    Ok((total * inv_n, grad))
}

/// Mean Huber loss: `0.5 d^2 / delta` inside `|d| < delta`, `|d| - 0.5 delta` outside.
pub fn smooth_l1<T: Real>(pred: &[T], target: &[T], delta: T) -> Result<T> {
    Ok(smooth_l1_grad(pred, target, delta)?.0)
}

pub fn smooth_l1_grad<T: Real>(pred: &[T], target: &[T], delta: T) -> Result<(T, Vec<T>)> {
    if pred.len() != target.len() {
        return Err(Error::Dimension(format!(
            "prediction length {} vs target length {}",
            pred.len(),
            target.len()
        )));
    }
    if !(delta > T::zero()) {
        return Err(Error::Parameter("smooth L1 delta must be positive".into()));
    }
    if pred.is_empty() {
        return Ok((T::zero(), Vec::new()));
    }
    let half = T::lit(0.5);
    let inv_n = T::one() / T::from_usize(pred.len()).expect("count fits");
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let d = *p - *t;
        if d.abs() < delta {
            total = total + half * d * d / delta;
            grad.push(d / delta * inv_n);
        } else {
            total = total + d.abs() - half * delta;
            grad.push(d.signum() * inv_n);
        }
    }
    Ok((total * inv_n, grad))
}
