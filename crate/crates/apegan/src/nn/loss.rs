//! Softmax cross-entropy on logits.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax over the trailing `k` entries.
pub(crate) fn softmax_rows(logits: &Tensor, k: usize) -> Tensor {
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Softmax probabilities for an `N x K` logits tensor.
pub fn softmax(logits: &Tensor) -> Tensor {
    let k = logits.stride0();
    softmax_rows(logits, k)
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<usize> {
    let k = logits.stride0();
    if logits.batch() != labels.len() {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} logit rows vs {} labels", logits.batch(), labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::config(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    Ok(k)
}

/// Mean negative log-likelihood of the labels under row-wise softmax.
/// Accumulated in f64; always non-negative.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let k = check_labels(logits, labels)?;
    let mut total = 0f64;
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let lse: f64 = row
            .iter()
            .map(|&v| f64::from(v - max).exp())
            .sum::<f64>()
            .ln()
            + f64::from(max);
        total += lse - f64::from(row[label]);
    }
    Ok((total / labels.len() as f64).max(0.0))
}

/// Gradient of [`cross_entropy`] with respect to the logits:
/// `(softmax - onehot) / N`.
pub fn cross_entropy_grad(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let k = check_labels(logits, labels)?;
    let mut grad = softmax(logits);
    let n = labels.len() as f32;
    for (row, &label) in grad.data_mut().chunks_exact_mut(k).zip(labels) {
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    Ok(grad)
}

/// Per-sample cross-entropy gradient, i.e. `softmax - onehot` without the
/// `1/N` reduction. Used where each sample carries its own objective.
pub fn per_sample_cross_entropy_grad(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let k = check_labels(logits, labels)?;
    let mut grad = softmax(logits);
    for (row, &label) in grad.data_mut().chunks_exact_mut(k).zip(labels) {
        row[label] -= 1.0;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::zeros(&[3, 10]);
        let ce = cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert_relative_eq!(ce, 10f64.ln(), max_relative = 1e-6);
    }

    #[test]
    fn certain_prediction_gives_zero() {
        // a huge margin drives -log p to ~0
        let mut logits = Tensor::zeros(&[1, 10]);
        logits.data_mut()[3] = 100.0;
        let ce = cross_entropy(&logits, &[3]).unwrap();
        assert!(ce >= 0.0 && ce < 1e-6, "ce = {ce}");
    }

    #[test]
    fn two_class_hand_computation() {
        // logits [2, 0], label 0 -> -ln(e^2 / (e^2 + 1))
        let logits = Tensor::from_vec(vec![1, 2], vec![2.0, 0.0]).unwrap();
        let ce = cross_entropy(&logits, &[0]).unwrap();
        assert_relative_eq!(ce, 0.126928, max_relative = 1e-4);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let logits = Tensor::zeros(&[1, 10]);
        assert!(cross_entropy(&logits, &[10]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Tensor::from_vec(vec![2, 3], vec![1.0, -2.0, 0.5, 30.0, 10.0, -5.0]).unwrap();
        let p = softmax(&logits);
        for row in p.data().chunks_exact(3) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn grad_rows_sum_to_zero() {
        let logits = Tensor::from_vec(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 1.0, -5.0]).unwrap();
        let g = cross_entropy_grad(&logits, &[2, 0]).unwrap();
        for row in g.data().chunks_exact(3) {
            let s: f32 = row.iter().sum();
            assert!(s.abs() < 1e-6);
        }
    }
}
