//! Finite-difference gradient verification.
//!
//! These checks are deliberately independent of the backpropagation code
//! path: they only evaluate forward passes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::loss::cross_entropy;
use crate::nn::network::Network;
use crate::par::Parallelism;
use crate::rng::{derive, seeded};
use crate::tensor::Tensor;

/// Relative disagreement, floored to avoid 0/0 blowups on dead pixels.
fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares the analytic input gradient of the cross-entropy against central
/// finite differences on `n_pixels` sampled pixels. Returns the maximum
/// relative error. The batch must be small (at most 4 images) and `h`
/// strictly positive.
pub fn finite_difference_check(
    net: &Network,
    batch: &Tensor,
    labels: &[usize],
    h: f64,
    n_pixels: usize,
    seed: u64,
    mode: Parallelism,
) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::config(format!("finite-difference step h={h} is invalid")));
    }
    if batch.batch() > 4 {
        return Err(Error::config(format!(
            "finite-difference check expects at most 4 images, got {}",
            batch.batch()
        )));
    }
    let cache = net.forward_cached(batch, mode)?;
    let seed_grad = crate::nn::loss::cross_entropy_grad(cache.output(), labels)?;
    let (analytic, _) = net.backward(&cache, &seed_grad, false, mode);

    let mut rng = derive(seed, "fd-pixels");
    let mut worst = 0f64;
    for _ in 0..n_pixels {
        let idx = rng.random_range(0..batch.numel());
        let mut minus = batch.clone();
        minus.data_mut()[idx] -= h as f32;
        let mut plus = batch.clone();
        plus.data_mut()[idx] += h as f32;
        let lp = cross_entropy(&net.forward(&plus, mode)?, labels)?;
        let lm = cross_entropy(&net.forward(&minus, mode)?, labels)?;
        let numeric = (lp - lm) / (2.0 * h);
        let a = f64::from(analytic.data()[idx]);
        worst = worst.max(rel_err(a, numeric, 1e-3));
    }
    Ok(worst)
}

/// Loss functional used by the generic layer checks: the inner product of
/// the network output with a fixed random probe vector, accumulated in f64.
fn probe_loss(out: &Tensor, probe: &[f32]) -> f64 {
    out.data()
        .iter()
        .zip(probe)
        .map(|(&o, &p)| f64::from(o) * f64::from(p))
        .sum()
}

fn probe_vector(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = derive(seed, "fd-probe");
    (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn forward_fixed(net: &mut Network, x: &Tensor, training: bool, seed: u64, mode: Parallelism) -> Result<Tensor> {
    if training {
        // A fresh RNG per evaluation keeps dropout masks identical across
        // finite-difference evaluations.
        let mut rng = seeded(seed);
        Ok(net.forward_train(x, &mut rng, mode)?.output().clone())
    } else {
        net.forward(x, mode)
    }
}

/// Folds one sampled entry into the running check.
///
/// The numeric estimate is formed at step sizes `h` and `2h`; when the two
/// disagree the sample point sits on a relu/pool kink or is dominated by
/// f32 forward rounding, and carries no information about the analytic
/// gradient — those entries are skipped but counted, and the check fails if
/// fewer than half the entries survive.
struct FdTally {
    worst: f64,
    kept: usize,
    total: usize,
}

impl FdTally {
    fn new() -> Self {
        FdTally {
            worst: 0.0,
            kept: 0,
            total: 0,
        }
    }

    fn add(&mut self, analytic: f64, numeric_h: f64, numeric_2h: f64) {
        self.total += 1;
        let spread = (numeric_h - numeric_2h).abs();
        if spread > 0.02 * numeric_h.abs().max(numeric_2h.abs()).max(1e-3) {
            return;
        }
        self.kept += 1;
        self.worst = self.worst.max(rel_err(analytic, numeric_h, 1e-3));
    }

    fn finish(self, what: &str) -> Result<f64> {
        if self.total > 0 && self.kept * 2 < self.total {
            return Err(Error::config(format!(
                "{what}: only {}/{} finite-difference samples were numerically stable",
                self.kept, self.total
            )));
        }
        Ok(self.worst)
    }
}

/// Verifies analytic *parameter* gradients against central differences on a
/// sample of parameter entries. Returns the maximum relative error.
pub fn param_fd_check(
    net: &mut Network,
    x: &Tensor,
    training: bool,
    h: f32,
    entries_per_tensor: usize,
    seed: u64,
    mode: Parallelism,
) -> Result<f64> {
    let out = forward_fixed(net, x, training, seed, mode)?;
    let probe = probe_vector(out.numel(), seed);

    let analytic: Vec<Tensor> = {
        let cache = if training {
            let mut rng = seeded(seed);
            net.forward_train(x, &mut rng, mode)?
        } else {
            net.forward_cached(x, mode)?
        };
        let seed_t = Tensor::from_vec(cache.output().shape().to_vec(), probe.clone())?;
        let (_, grads) = net.backward(&cache, &seed_t, true, mode);
        grads.expect("param gradients requested")
    };

    let mut rng = derive(seed, "fd-param-entries");
    let n_tensors = net.trainable_params().len();
    let mut tally = FdTally::new();
    for ti in 0..n_tensors {
        let numel = net.trainable_params()[ti].numel();
        for _ in 0..entries_per_tensor.min(numel) {
            let idx = rng.random_range(0..numel);
            let orig = net.trainable_params()[ti].data()[idx];
            let mut eval = |delta: f32| -> Result<f64> {
                net.trainable_params_mut()[ti].data_mut()[idx] = orig + delta;
                let l = probe_loss(&forward_fixed(net, x, training, seed, mode)?, &probe);
                Ok(l)
            };
            let n_h = (eval(h)? - eval(-h)?) / (2.0 * f64::from(h));
            let n_2h = (eval(2.0 * h)? - eval(-2.0 * h)?) / (4.0 * f64::from(h));
            net.trainable_params_mut()[ti].data_mut()[idx] = orig;
            tally.add(f64::from(analytic[ti].data()[idx]), n_h, n_2h);
        }
    }
    tally.finish("param_fd_check")
}

/// Verifies analytic *input* gradients against central differences on a
/// sample of input entries. Returns the maximum relative error.
pub fn input_fd_check(
    net: &mut Network,
    x: &Tensor,
    training: bool,
    h: f32,
    n_entries: usize,
    seed: u64,
    mode: Parallelism,
) -> Result<f64> {
    let out = forward_fixed(net, x, training, seed, mode)?;
    let probe = probe_vector(out.numel(), seed);

    let analytic = {
        let cache = if training {
            let mut rng = seeded(seed);
            net.forward_train(x, &mut rng, mode)?
        } else {
            net.forward_cached(x, mode)?
        };
        let seed_t = Tensor::from_vec(cache.output().shape().to_vec(), probe.clone())?;
        let (dx, _) = net.backward(&cache, &seed_t, false, mode);
        dx
    };

    let mut rng = derive(seed, "fd-input-entries");
    let mut tally = FdTally::new();
    for _ in 0..n_entries.min(x.numel()) {
        let idx = rng.random_range(0..x.numel());
        let orig = x.data()[idx];
        let mut probe_x = x.clone();
        let mut eval = |delta: f32, buf: &mut Tensor| -> Result<f64> {
            buf.data_mut()[idx] = orig + delta;
            let l = probe_loss(&forward_fixed(net, buf, training, seed, mode)?, &probe);
            Ok(l)
        };
        let n_h = (eval(h, &mut probe_x)? - eval(-h, &mut probe_x)?) / (2.0 * f64::from(h));
        let n_2h =
            (eval(2.0 * h, &mut probe_x)? - eval(-2.0 * h, &mut probe_x)?) / (4.0 * f64::from(h));
        tally.add(f64::from(analytic.data()[idx]), n_h, n_2h);
    }
    tally.finish("input_fd_check")
}
