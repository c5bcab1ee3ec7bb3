//! Carlini–Wagner L2 attack (untargeted form).
//!
//! Change of variable `x' = (tanh(w) + 1) / 2` keeps iterates inside the
//! box; the margin loss `max(Z_true - max_{i != true} Z_i, -kappa)` is
//! weighted by a per-sample constant found with binary search. The returned
//! example per sample is the successful one with minimum L2 distortion.
//!
//! Samples that have held a successful example for `cw_polish_iters`
//! iterations retire from the batch, so the inner loop shrinks as the
//! attack converges.

use crate::attacks::{AttackConfig, AttackResult, ATTACK_BATCH};
use crate::error::Result;
use crate::nn::Network;
use crate::par::Parallelism;
use crate::tensor::Tensor;

const SUCCESS_MARGIN_TOL: f32 = 1e-4;

pub fn cw_l2(
    net: &Network,
    x: &Tensor,
    y_true: &[usize],
    kappa: f32,
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
        let (slice, iters) = cw_slice(net, &x0, &y_true[start..end], kappa, cfg, mode)?;
        adv.data_mut()[start * stride..end * stride].copy_from_slice(slice.data());
        iterations[start..end].copy_from_slice(&iters);
        start = end;
    }

    AttackResult::assemble(net, x, adv, y_true, None, iterations, mode)
}

fn cw_slice(
    net: &Network,
    x0: &Tensor,
    y_true: &[usize],
    kappa: f32,
    cfg: &AttackConfig,
    mode: Parallelism,
) -> Result<(Tensor, Vec<usize>)> {
    let n = x0.batch();
    let stride = x0.stride0();
    let mut shape = x0.shape().to_vec();
    let classes = {
        let s = net.output_shape();
        s.0 * s.1 * s.2
    };

    // arctanh of the clamped original: w such that x' = x at the start
    let w0: Vec<f32> = x0
        .data()
        .iter()
        .map(|&v| {
            let c = v.clamp(1e-6, 1.0 - 1e-6);
            (2.0 * c - 1.0).atanh()
        })
        .collect();

    let mut c = vec![cfg.cw_initial_c; n];
    let mut lo = vec![0f32; n];
    let mut hi = vec![f32::NAN; n]; // NaN = no successful c found yet
    let mut best_l2 = vec![f64::INFINITY; n];
    let mut best = x0.clone();
    let mut iterations = vec![0usize; n];
    let (beta1, beta2, eps_adam) = (0.9f32, 0.999f32, 1e-8f32);

    for _search in 0..cfg.cw_search_steps {
        let mut w = w0.clone();
        let mut m = vec![0f32; n * stride];
        let mut v = vec![0f32; n * stride];
        let mut step_count = vec![0i32; n];
        let mut succeeded_at: Vec<Option<usize>> = vec![None; n];
        let mut active: Vec<usize> = (0..n).collect();
        let check_every = (cfg.cw_iters / 10).max(1);
        let mut prev_obj = f64::INFINITY;

        for it in 0..cfg.cw_iters {
            if active.is_empty() {
                break;
            }
            // x' of the active samples
            shape[0] = active.len();
            let mut xp = Tensor::zeros(&shape);
            for (local, &i) in active.iter().enumerate() {
                for cc in 0..stride {
                    xp.data_mut()[local * stride + cc] = (w[i * stride + cc].tanh() + 1.0) * 0.5;
                }
            }
            let cache = net.forward_cached(&xp, mode)?;
            let logits = cache.output();

            let mut seed = Tensor::zeros(logits.shape());
            let mut active_obj = 0f64;
            for (local, &i) in active.iter().enumerate() {
                let row = &logits.data()[local * classes..(local + 1) * classes];
                let t = y_true[i];
                let (mut runner_idx, mut runner) = (usize::MAX, f32::NEG_INFINITY);
                let mut argmax = 0usize;
                for (k, &z) in row.iter().enumerate() {
                    if z > row[argmax] {
                        argmax = k;
                    }
                    if k != t && z > runner {
                        runner = z;
                        runner_idx = k;
                    }
                }
                let margin = row[t] - runner; // want <= -kappa
                let mut l2 = 0f64;
                for cc in 0..stride {
                    let d = f64::from(xp.data()[local * stride + cc] - x0.data()[i * stride + cc]);
                    l2 += d * d;
                }
                active_obj += l2 + f64::from(c[i]) * f64::from(margin.max(-kappa));

                if argmax != t && -margin >= kappa - SUCCESS_MARGIN_TOL {
                    if succeeded_at[i].is_none() {
                        succeeded_at[i] = Some(it);
                    }
                    if l2 < best_l2[i] {
                        best_l2[i] = l2;
                        best.data_mut()[i * stride..(i + 1) * stride]
                            .copy_from_slice(&xp.data()[local * stride..(local + 1) * stride]);
                    }
                }
                if margin > -kappa {
                    let srow = &mut seed.data_mut()[local * classes..(local + 1) * classes];
                    srow[t] = c[i];
                    srow[runner_idx] = -c[i];
                }
            }

            let (dxp, _) = net.backward(&cache, &seed, false, mode);
            // chain through the distortion term and the tanh reparameterization
            for (local, &i) in active.iter().enumerate() {
                step_count[i] += 1;
                let bc1 = 1.0 - beta1.powi(step_count[i]);
                let bc2 = 1.0 - beta2.powi(step_count[i]);
                iterations[i] += 1;
                for cc in 0..stride {
                    let j = i * stride + cc;
                    let xpj = xp.data()[local * stride + cc];
                    let g_xp = dxp.data()[local * stride + cc] + 2.0 * (xpj - x0.data()[j]);
                    let g = g_xp * 2.0 * xpj * (1.0 - xpj);
                    m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                    v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                    w[j] -= cfg.cw_lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps_adam);
                }
            }

            // retire samples that have polished long enough
            let polish = cfg.cw_polish_iters;
            active.retain(|&i| succeeded_at[i].map(|s| it < s + polish).unwrap_or(true));

            // early abort on loss plateau of the still-active samples
            if (it + 1) % check_every == 0 {
                if active_obj > prev_obj * 0.9999 {
                    break;
                }
                prev_obj = active_obj;
            }
        }

        // binary-search update per sample
        for i in 0..n {
            if succeeded_at[i].is_some() {
                hi[i] = if hi[i].is_nan() { c[i] } else { hi[i].min(c[i]) };
                c[i] = (lo[i] + hi[i]) / 2.0;
            } else {
                lo[i] = lo[i].max(c[i]);
                c[i] = if hi[i].is_nan() {
                    (c[i] * 10.0).min(cfg.cw_c_max)
                } else {
                    (lo[i] + hi[i]) / 2.0
                };
            }
        }
    }

    Ok((best, iterations))
}
