//! Error-rate evaluation.

use crate::error::Result;
use crate::gan::PurifierState;
use crate::models::Classifier;
use crate::nn::Network;
use crate::par::Parallelism;
use crate::tensor::Tensor;

/// Forward batches are processed in slices of this many samples to bound
/// activation memory.
pub(crate) const EVAL_BATCH: usize = 512;

/// Top-1 predictions (argmax over logits), evaluated in bounded slices.
pub fn predictions(net: &Network, images: &Tensor, mode: Parallelism) -> Result<Vec<usize>> {
    let n = images.batch();
    let mut preds = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BATCH).min(n);
        let slice = images.gather(&(start..end).collect::<Vec<_>>());
        let logits = net.forward(&slice, mode)?;
        let k = logits.stride0();
        for row in logits.data().chunks_exact(k) {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            preds.push(best);
        }
        start = end;
    }
    Ok(preds)
}

/// Percentage of inputs whose top-1 prediction differs from the label.
/// With a purifier, inputs pass through the generator first.
pub fn error_rate(
    model: &Classifier,
    images: &Tensor,
    labels: &[usize],
    purifier: Option<&PurifierState>,
    mode: Parallelism,
) -> Result<f64> {
    assert_eq!(images.batch(), labels.len(), "error_rate: count mismatch");
    let preds = match purifier {
        Some(p) => {
            let purified = p.purify(images, mode)?;
            predictions(&model.net, &purified, mode)?
        }
        None => predictions(&model.net, images, mode)?,
    };
    let wrong = preds.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(100.0 * wrong as f64 / labels.len() as f64)
}

/// `100 - error_rate`, the complementary view.
pub fn accuracy(
    model: &Classifier,
    images: &Tensor,
    labels: &[usize],
    purifier: Option<&PurifierState>,
    mode: Parallelism,
) -> Result<f64> {
    Ok(100.0 - error_rate(model, images, labels, purifier, mode)?)
}
