//! DeepFool: iterative minimal-L2 perturbation via local linearization.

use crate::attacks::{AttackResult, ATTACK_BATCH};
use crate::error::Result;
use crate::nn::Network;
use crate::par::Parallelism;
use crate::tensor::Tensor;

/// Gradients of every class logit with respect to the inputs:
/// `grads[k]` has the batch shape and holds d logit_k / d x.
fn class_gradients(net: &Network, x: &Tensor, classes: usize, mode: Parallelism) -> Result<Vec<Tensor>> {
    let cache = net.forward_cached(x, mode)?;
    let out_shape = cache.output().shape().to_vec();
    let k_stride: usize = out_shape[1..].iter().product();
    let mut grads = Vec::with_capacity(classes);
    for k in 0..classes {
        let mut seed = Tensor::zeros(&out_shape);
        for row in seed.data_mut().chunks_exact_mut(k_stride) {
            row[k] = 1.0;
        }
        let (dx, _) = net.backward(&cache, &seed, false, mode);
        grads.push(dx);
    }
    Ok(grads)
}

/// Runs DeepFool on a batch. Samples already misclassified keep a zero
/// perturbation and report zero iterations. The final perturbation is
/// scaled by `1 + overshoot` and clipped to the image range.
pub fn deepfool(
    net: &Network,
    x: &Tensor,
    y_true: &[usize],
    max_iter: usize,
    overshoot: f32,
    mode: Parallelism,
) -> Result<AttackResult> {
    let n = x.batch();
    let stride = x.stride0();
    let classes = {
        let shape = net.output_shape();
        shape.0 * shape.1 * shape.2
    };
    let mut adv = x.clone();
    let mut iterations = vec![0usize; n];

    let mut start = 0;
    while start < n {
        let end = (start + ATTACK_BATCH).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let x0 = x.gather(&idx);
        let labels = &y_true[start..end];
        let (adv_slice, iters) = deepfool_slice(net, &x0, labels, classes, max_iter, overshoot, mode)?;
        adv.data_mut()[start * stride..end * stride].copy_from_slice(adv_slice.data());
        iterations[start..end].copy_from_slice(&iters);
        start = end;
    }

    AttackResult::assemble(net, x, adv, y_true, None, iterations, mode)
}

fn deepfool_slice(
    net: &Network,
    x0: &Tensor,
    y_true: &[usize],
    classes: usize,
    max_iter: usize,
    overshoot: f32,
    mode: Parallelism,
) -> Result<(Tensor, Vec<usize>)> {
    let n = x0.batch();
    let stride = x0.stride0();
    let mut r_total = vec![0f32; n * stride];
    let mut iterations = vec![0usize; n];

    // active = still classified as the true label
    let preds = crate::models::predictions(net, x0, mode)?;
    let mut active: Vec<usize> = (0..n).filter(|&i| preds[i] == y_true[i]).collect();

    for _ in 0..max_iter {
        if active.is_empty() {
            break;
        }
        // current iterate: overshoot applied and clipped into the image box,
        // so the crossing test sees exactly what the caller will receive
        let mut cur = x0.gather(&active);
        for (local, &i) in active.iter().enumerate() {
            for (c, v) in cur.data_mut()[local * stride..(local + 1) * stride]
                .iter_mut()
                .enumerate()
            {
                *v = (*v + (1.0 + overshoot) * r_total[i * stride + c]).clamp(0.0, 1.0);
            }
        }
        let logits = net.forward(&cur, mode)?;
        let grads = class_gradients(net, &cur, classes, mode)?;

        let mut next_active = Vec::with_capacity(active.len());
        for (local, &i) in active.iter().enumerate() {
            let k0 = y_true[i];
            let row = &logits.data()[local * classes..(local + 1) * classes];
            // already crossed the boundary
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if argmax != k0 {
                continue;
            }
            iterations[i] += 1;
            // nearest linearized boundary among the other classes
            let mut best: Option<(f64, usize)> = None;
            for k in 0..classes {
                if k == k0 {
                    continue;
                }
                let f_diff = f64::from(row[k] - row[k0]);
                let mut w_norm2 = 0f64;
                for c in 0..stride {
                    let w = f64::from(grads[k].data()[local * stride + c])
                        - f64::from(grads[k0].data()[local * stride + c]);
                    w_norm2 += w * w;
                }
                if w_norm2 <= 1e-20 {
                    continue;
                }
                let dist = f_diff.abs() / w_norm2.sqrt();
                if best.map(|(d, _)| dist < d).unwrap_or(true) {
                    best = Some((dist, k));
                }
            }
            let Some((_, l)) = best else {
                continue;
            };
            // minimal step onto the chosen hyperplane (plus a nudge so the
            // argmax actually flips on exactly linear models)
            let f_diff = f64::from(row[l] - row[k0]);
            let mut w_norm2 = 0f64;
            for c in 0..stride {
                let w = f64::from(grads[l].data()[local * stride + c])
                    - f64::from(grads[k0].data()[local * stride + c]);
                w_norm2 += w * w;
            }
            let scale = ((f_diff.abs() + 1e-4) / w_norm2) as f32;
            for c in 0..stride {
                let w = grads[l].data()[local * stride + c] - grads[k0].data()[local * stride + c];
                r_total[i * stride + c] += scale * w;
            }
            next_active.push(i);
        }
        active = next_active;
    }

    let mut adv = x0.clone();
    for (v, &r) in adv.data_mut().iter_mut().zip(&r_total) {
        *v = (*v + (1.0 + overshoot) * r).clamp(0.0, 1.0);
    }
    Ok((adv, iterations))
}
