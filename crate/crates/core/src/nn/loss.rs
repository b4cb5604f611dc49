use alloc::vec::Vec;

use crate::{Error, Result, Scalar};

/// Numerically stable softmax of one row.
pub fn softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean negative log-likelihood over the batch; also returns the softmax
/// probabilities, which the backward pass reuses.
pub(crate) fn softmax_ce_forward<T: Scalar>(
    logits: &[T],
    targets: &[usize],
    classes: usize,
) -> Result<(T, Vec<T>)> {
    let batch = targets.len();
    let mut probs = Vec::with_capacity(logits.len());
    let mut total = T::zero();
    for (row, &t) in logits.chunks(classes).zip(targets) {
        if t >= classes {
            return Err(Error::TargetOutOfRange { target: t, classes });
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let log_z = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        total = total + (log_z - row[t]);
        probs.extend(row.iter().map(|&v| (v - log_z).exp()));
    }
    Ok((total / T::lit(batch as f64), probs))
}

pub(crate) fn softmax_ce_backward<T: Scalar>(probs: &[T], targets: &[usize], classes: usize, upstream: T) -> Vec<T> {
    let scale = upstream / T::lit(targets.len() as f64);
    let mut grad: Vec<T> = probs.iter().map(|&p| p * scale).collect();
    for (b, &t) in targets.iter().enumerate() {
        grad[b * classes + t] = grad[b * classes + t] - scale;
    }
    grad
}
