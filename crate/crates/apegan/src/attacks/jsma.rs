//! Jacobian saliency map attack: greedy targeted L0 perturbation.

use crate::attacks::{AttackResult, ATTACK_BATCH};
use crate::error::Result;
use crate::nn::Network;
use crate::par::Parallelism;
use crate::tensor::Tensor;

/// Targeted JSMA. Greedily picks the most salient still-modifiable pixel
/// per step and saturates it by `+theta` (clipped to 1) until the model
/// predicts the target class or the modified-pixel budget
/// `floor(gamma * W*H*C)` is exhausted.
pub fn jsma(
    net: &Network,
    x: &Tensor,
    y_true: &[usize],
    targets: &[usize],
    theta: f32,
    gamma: f32,
    mode: Parallelism,
) -> Result<AttackResult> {
    let n = x.batch();
    let stride = x.stride0();
    let mut adv = x.clone();
    let mut iterations = vec![0usize; n];

    let mut start = 0;
    while start < n {
        let end = (start + ATTACK_BATCH).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let x0 = x.gather(&idx);
        let (slice, iters) = jsma_slice(net, &x0, &targets[start..end], theta, gamma, mode)?;
        adv.data_mut()[start * stride..end * stride].copy_from_slice(slice.data());
        iterations[start..end].copy_from_slice(&iters);
        start = end;
    }

    AttackResult::assemble(net, x, adv, y_true, Some(targets), iterations, mode)
}

fn jsma_slice(
    net: &Network,
    x0: &Tensor,
    targets: &[usize],
    theta: f32,
    gamma: f32,
    mode: Parallelism,
) -> Result<(Tensor, Vec<usize>)> {
    let n = x0.batch();
    let stride = x0.stride0();
    let budget = (gamma * stride as f32).floor() as usize;
    let mut cur = x0.clone();
    let mut iterations = vec![0usize; n];
    if budget == 0 {
        return Ok((cur, iterations));
    }
    let classes = {
        let s = net.output_shape();
        s.0 * s.1 * s.2
    };

    let mut modified: Vec<Vec<bool>> = vec![vec![false; stride]; n];
    let mut modified_count = vec![0usize; n];
    let mut active: Vec<usize> = (0..n).collect();
    // worst case every budgeted pixel needs 1/theta nudges
    let max_steps = budget * (1.0 / theta).ceil() as usize + 1;

    for _ in 0..max_steps {
        if active.is_empty() {
            break;
        }
        let batch = cur.gather(&active);
        let cache = net.forward_cached(&batch, mode)?;
        let logits = cache.output();

        // alpha = dZ_target/dx, beta = sum_{j != target} dZ_j/dx
        let mut seed_t = Tensor::zeros(logits.shape());
        for (row, &i) in seed_t.data_mut().chunks_exact_mut(classes).zip(&active) {
            row[targets[i]] = 1.0;
        }
        let (alpha, _) = net.backward(&cache, &seed_t, false, mode);
        let ones = Tensor::full(logits.shape(), 1.0);
        let (total, _) = net.backward(&cache, &ones, false, mode);

        let mut next_active = Vec::with_capacity(active.len());
        for (local, &i) in active.iter().enumerate() {
            let row = &logits.data()[local * classes..(local + 1) * classes];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if pred == targets[i] {
                continue;
            }
            iterations[i] += 1;

            let alpha_row = &alpha.data()[local * stride..(local + 1) * stride];
            let t = &total.data()[local * stride..(local + 1) * stride];
            let mut best: Option<(f32, usize)> = None;
            let mut fallback: Option<(f32, usize)> = None;
            for p in 0..stride {
                let v = cur.data()[i * stride + p];
                if v >= 1.0 {
                    continue;
                }
                if !modified[i][p] && modified_count[i] >= budget {
                    continue;
                }
                let al = alpha_row[p];
                let be = t[p] - al;
                // salient: pushes the target up while pulling the rest down
                if al > 0.0 && be < 0.0 {
                    let score = al * -be;
                    if best.map(|(s, _)| score > s).unwrap_or(true) {
                        best = Some((score, p));
                    }
                } else {
                    let score = al - be;
                    if fallback.map(|(s, _)| score > s).unwrap_or(true) {
                        fallback = Some((score, p));
                    }
                }
            }
            let Some((_, p)) = best.or(fallback) else {
                continue; // nothing modifiable left
            };
            let v = &mut cur.data_mut()[i * stride + p];
            *v = (*v + theta).min(1.0);
            if !modified[i][p] {
                modified[i][p] = true;
                modified_count[i] += 1;
            }
            next_active.push(i);
        }
        active = next_active;
    }
    Ok((cur, iterations))
}
