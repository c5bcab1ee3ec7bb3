//! Fast gradient sign method and its iterated variant.

use crate::attacks::{clip_neighborhood, sign, AttackResult, ATTACK_BATCH};
use crate::error::Result;
use crate::nn::{cross_entropy_grad, Network};
use crate::par::Parallelism;
use crate::tensor::Tensor;

/// Gradient of the cross-entropy with respect to the input pixels,
/// evaluated in inference mode (dropout off, batchnorm frozen), sliced to
/// bound activation memory.
pub(crate) fn input_gradient(
    net: &Network,
    x: &Tensor,
    y: &[usize],
    mode: Parallelism,
) -> Result<Tensor> {
    let n = x.batch();
    let mut grad = Tensor::zeros(x.shape());
    let stride = x.stride0();
    let mut start = 0;
    while start < n {
        let end = (start + ATTACK_BATCH).min(n);
        let slice = x.gather(&(start..end).collect::<Vec<_>>());
        let cache = net.forward_cached(&slice, mode)?;
        let seed = cross_entropy_grad(cache.output(), &y[start..end])?;
        let (dx, _) = net.backward(&cache, &seed, false, mode);
        grad.data_mut()[start * stride..end * stride].copy_from_slice(dx.data());
        start = end;
    }
    Ok(grad)
}

/// One-step FGSM perturbation: `clip_[0,1](x + eps * sign(grad))`.
/// Shared by the attack proper and adversarial training.
pub fn fgsm_perturb(
    net: &Network,
    x: &Tensor,
    y_true: &[usize],
    eps: f32,
    mode: Parallelism,
) -> Result<Tensor> {
    let grad = input_gradient(net, x, y_true, mode)?;
    let mut adv = x.clone();
    for (v, &g) in adv.data_mut().iter_mut().zip(grad.data()) {
        *v = (*v + eps * sign(g)).clamp(0.0, 1.0);
    }
    Ok(adv)
}

/// Fast gradient sign attack (single gradient call).
pub fn fgsm(
    net: &Network,
    x: &Tensor,
    y_true: &[usize],
    eps: f32,
    mode: Parallelism,
) -> Result<AttackResult> {
    let adv = fgsm_perturb(net, x, y_true, eps, mode)?;
    AttackResult::assemble(net, x, adv, y_true, None, vec![1; y_true.len()], mode)
}

/// Iterative gradient sign: `n_iter` FGSM steps of size `alpha`, each
/// clipped back into the eps-neighbourhood of the original.
pub fn iterative_gradient_sign(
    net: &Network,
    x: &Tensor,
    y_true: &[usize],
    eps: f32,
    alpha: f32,
    n_iter: usize,
    mode: Parallelism,
) -> Result<AttackResult> {
    let mut cur = x.clone();
    for _ in 0..n_iter {
        let grad = input_gradient(net, &cur, y_true, mode)?;
        for (v, &g) in cur.data_mut().iter_mut().zip(grad.data()) {
            *v += alpha * sign(g);
        }
        cur = clip_neighborhood(&cur, x, eps)?;
    }
    AttackResult::assemble(net, x, cur, y_true, None, vec![n_iter; y_true.len()], mode)
}
