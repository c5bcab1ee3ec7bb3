//! Box-constrained L-BFGS attack (targeted).
//!
//! Minimizes `lambda * ||d - x||^2 + J(d, y_fool)` over `d in [0, 1]` with a
//! projected limited-memory quasi-Newton inner solver, and line-searches
//! `lambda` by log-space bisection toward the largest weight that still
//! reaches the target class — i.e. the least-distorted fooling solution.
//! Samples where no lambda in the range fools the model are flagged
//! unsuccessful and keep their original pixels.

use crate::attacks::{AttackConfig, AttackResult, ATTACK_BATCH};
use crate::error::Result;
use crate::nn::{per_sample_cross_entropy_grad, Network};
use crate::par::Parallelism;
use crate::tensor::Tensor;

pub fn lbfgs_attack(
    net: &Network,
    x: &Tensor,
    y_true: &[usize],
    targets: &[usize],
    cfg: &AttackConfig,
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
        let (slice, iters) = lbfgs_slice(net, &x0, &targets[start..end], cfg, mode)?;
        adv.data_mut()[start * stride..end * stride].copy_from_slice(slice.data());
        iterations[start..end].copy_from_slice(&iters);
        start = end;
    }

    AttackResult::assemble(net, x, adv, y_true, Some(targets), iterations, mode)
}

/// Per-sample objective values: `lambda * ||d - x||^2 + CE(d, target)`.
fn objective(
    net: &Network,
    d: &Tensor,
    x0: &Tensor,
    targets: &[usize],
    lambda: &[f32],
    mode: Parallelism,
) -> Result<Vec<f64>> {
    let stride = d.stride0();
    let logits = net.forward(d, mode)?;
    let classes = logits.stride0();
    let mut vals = Vec::with_capacity(targets.len());
    for (i, &t) in targets.iter().enumerate() {
        let row = &logits.data()[i * classes..(i + 1) * classes];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let lse: f64 = row.iter().map(|&z| f64::from(z - max).exp()).sum::<f64>().ln() + f64::from(max);
        let ce = lse - f64::from(row[t]);
        let mut dist = 0f64;
        for c in 0..stride {
            let dv = f64::from(d.data()[i * stride + c] - x0.data()[i * stride + c]);
            dist += dv * dv;
        }
        vals.push(f64::from(lambda[i]) * dist + ce);
    }
    Ok(vals)
}

/// Objective values and per-sample gradients in one pass.
fn objective_grad(
    net: &Network,
    d: &Tensor,
    x0: &Tensor,
    targets: &[usize],
    lambda: &[f32],
    mode: Parallelism,
) -> Result<(Vec<f64>, Tensor, Vec<usize>)> {
    let stride = d.stride0();
    let cache = net.forward_cached(d, mode)?;
    let logits = cache.output();
    let classes = logits.stride0();

    let mut vals = Vec::with_capacity(targets.len());
    let mut preds = Vec::with_capacity(targets.len());
    for (i, &t) in targets.iter().enumerate() {
        let row = &logits.data()[i * classes..(i + 1) * classes];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let lse: f64 = row.iter().map(|&z| f64::from(z - max).exp()).sum::<f64>().ln() + f64::from(max);
        let ce = lse - f64::from(row[t]);
        let mut dist = 0f64;
        for c in 0..stride {
            let dv = f64::from(d.data()[i * stride + c] - x0.data()[i * stride + c]);
            dist += dv * dv;
        }
        vals.push(f64::from(lambda[i]) * dist + ce);
        preds.push(
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0,
        );
    }

    let seed = per_sample_cross_entropy_grad(logits, targets)?;
    let (mut grad, _) = net.backward(&cache, &seed, false, mode);
    for (i, &l) in lambda.iter().enumerate() {
        for c in 0..stride {
            let j = i * stride + c;
            grad.data_mut()[j] += 2.0 * l * (d.data()[j] - x0.data()[j]);
        }
    }
    Ok((vals, grad, preds))
}

struct History {
    pairs: std::collections::VecDeque<(Vec<f32>, Vec<f32>)>, // (s, y)
    memory: usize,
}

impl History {
    fn new(memory: usize) -> Self {
        History {
            pairs: std::collections::VecDeque::new(),
            memory,
        }
    }

    fn push(&mut self, s: Vec<f32>, y: Vec<f32>) {
        let sy: f64 = s.iter().zip(&y).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
        // degenerate curvature pairs are dropped (the step then degrades
        // toward projected gradient descent)
        if sy <= 1e-10 {
            return;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y));
    }

    /// Two-loop recursion for the quasi-Newton direction `-H g`.
    fn direction(&self, g: &[f32]) -> Vec<f32> {
        let mut q: Vec<f64> = g.iter().map(|&v| f64::from(v)).collect();
        if self.pairs.is_empty() {
            // normalized gradient descent until curvature is available
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            return q.iter().map(|&v| (-0.1 * v / norm) as f32).collect();
        }
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y) in self.pairs.iter().rev() {
            let rho = 1.0
                / s.iter()
                    .zip(y)
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum::<f64>();
            let alpha = rho
                * s.iter()
                    .zip(&q)
                    .map(|(&a, &b)| f64::from(a) * b)
                    .sum::<f64>();
            for (qi, &yi) in q.iter_mut().zip(y) {
                *qi -= alpha * f64::from(yi);
            }
            alphas.push((rho, alpha));
        }
        let (s_last, y_last) = self.pairs.back().unwrap();
        let sy: f64 = s_last.iter().zip(y_last).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
        let yy: f64 = y_last.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
        let h0 = (sy / yy.max(1e-12)).max(1e-12);
        for qi in q.iter_mut() {
            *qi *= h0;
        }
        for ((s, y), (rho, alpha)) in self.pairs.iter().zip(alphas.iter().rev()) {
            let beta = rho
                * y.iter()
                    .zip(&q)
                    .map(|(&a, &b)| f64::from(a) * b)
                    .sum::<f64>();
            for (qi, &si) in q.iter_mut().zip(s) {
                *qi += (alpha - beta) * f64::from(si);
            }
        }
        q.iter().map(|&v| -v as f32).collect()
    }
}

fn lbfgs_slice(
    net: &Network,
    x0: &Tensor,
    targets: &[usize],
    cfg: &AttackConfig,
    mode: Parallelism,
) -> Result<(Tensor, Vec<usize>)> {
    let n = x0.batch();
    let stride = x0.stride0();
    let mut iterations = vec![0usize; n];

    // samples already classified as the target need zero perturbation
    let initial_preds = crate::models::predictions(net, x0, mode)?;
    let mut best: Vec<Option<(f64, Vec<f32>)>> = (0..n)
        .map(|i| {
            (initial_preds[i] == targets[i]).then(|| (0.0, x0.sample(i).to_vec()))
        })
        .collect();

    let lo0 = cfg.lambda_min.log10();
    let hi0 = cfg.lambda_max.log10();
    let mut lo = vec![lo0; n];
    let mut hi = vec![hi0; n];

    for _step in 0..cfg.lambda_steps {
        let lambda: Vec<f32> = lo.iter().zip(&hi).map(|(&a, &b)| 10f32.powf((a + b) / 2.0)).collect();
        let (d, iters) = solve_inner(net, x0, targets, &lambda, cfg, mode)?;
        for (it, &add) in iterations.iter_mut().zip(&iters) {
            *it += add;
        }
        let preds = crate::models::predictions(net, &d, mode)?;
        for i in 0..n {
            let mid = (lo[i] + hi[i]) / 2.0;
            if preds[i] == targets[i] {
                // fooled: try a larger distortion weight for less distortion
                let mut l2 = 0f64;
                for c in 0..stride {
                    let dv = f64::from(d.data()[i * stride + c] - x0.data()[i * stride + c]);
                    l2 += dv * dv;
                }
                if best[i].as_ref().map(|(b, _)| l2 < *b).unwrap_or(true) {
                    best[i] = Some((l2, d.data()[i * stride..(i + 1) * stride].to_vec()));
                }
                lo[i] = mid;
            } else {
                hi[i] = mid;
            }
        }
    }

    let mut out = x0.clone();
    for (i, b) in best.iter().enumerate() {
        if let Some((_, pixels)) = b {
            out.data_mut()[i * stride..(i + 1) * stride].copy_from_slice(pixels);
        }
    }
    Ok((out, iterations))
}

/// Projected quasi-Newton descent, vectorized across the batch. Each sample
/// keeps its own curvature history; steps that fail a two-trial backtrack
/// fall back to a short projected gradient move.
fn solve_inner(
    net: &Network,
    x0: &Tensor,
    targets: &[usize],
    lambda: &[f32],
    cfg: &AttackConfig,
    mode: Parallelism,
) -> Result<(Tensor, Vec<usize>)> {
    let n = x0.batch();
    let stride = x0.stride0();
    let mut d = x0.clone();
    let mut histories: Vec<History> = (0..n).map(|_| History::new(cfg.memory)).collect();
    let mut prev: Option<(Tensor, Tensor)> = None; // (point, gradient)
    let iterations = vec![cfg.inner_iters; n];

    for _ in 0..cfg.inner_iters {
        let (f_cur, grad, _) = objective_grad(net, &d, x0, targets, lambda, mode)?;
        if let Some((d_prev, g_prev)) = &prev {
            for i in 0..n {
                let s: Vec<f32> = (0..stride)
                    .map(|c| d.data()[i * stride + c] - d_prev.data()[i * stride + c])
                    .collect();
                let y: Vec<f32> = (0..stride)
                    .map(|c| grad.data()[i * stride + c] - g_prev.data()[i * stride + c])
                    .collect();
                histories[i].push(s, y);
            }
        }

        // quasi-Newton trial step
        let mut trial = Tensor::zeros(d.shape());
        for i in 0..n {
            let dir = histories[i].direction(&grad.data()[i * stride..(i + 1) * stride]);
            for c in 0..stride {
                trial.data_mut()[i * stride + c] =
                    (d.data()[i * stride + c] + dir[c]).clamp(0.0, 1.0);
            }
        }
        let f_trial = objective(net, &trial, x0, targets, lambda, mode)?;

        // halve the rejected steps once
        let rejected: Vec<usize> = (0..n).filter(|&i| f_trial[i] > f_cur[i]).collect();
        let mut accepted = trial;
        if !rejected.is_empty() {
            let mut half = accepted.clone();
            for &i in &rejected {
                for c in 0..stride {
                    let j = i * stride + c;
                    half.data_mut()[j] = ((d.data()[j] + accepted.data()[j]) / 2.0).clamp(0.0, 1.0);
                }
            }
            let f_half = objective(net, &half, x0, targets, lambda, mode)?;
            for &i in &rejected {
                if f_half[i] <= f_cur[i] {
                    for c in 0..stride {
                        let j = i * stride + c;
                        accepted.data_mut()[j] = half.data()[j];
                    }
                } else {
                    // short projected gradient move
                    let g = &grad.data()[i * stride..(i + 1) * stride];
                    let norm = g.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt().max(1e-12)
                        as f32;
                    for c in 0..stride {
                        let j = i * stride + c;
                        accepted.data_mut()[j] =
                            (d.data()[j] - 0.05 * g[c] / norm).clamp(0.0, 1.0);
                    }
                }
            }
        }

        prev = Some((d, grad));
        d = accepted;
    }
    Ok((d, iterations))
}
