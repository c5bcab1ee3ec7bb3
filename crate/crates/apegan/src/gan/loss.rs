//! Fusion loss: pixel MSE plus the GAN adversarial term.

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::par::Parallelism;
use crate::tensor::Tensor;

/// Probability floor inside every logarithm.
pub(crate) const PROB_FLOOR: f64 = 1e-12;

/// Pixel-wise mean squared error between a clean batch and a
/// reconstruction, averaged over pixels, channels and the batch.
pub fn mse_loss(clean: &Tensor, reconstructed: &Tensor) -> Result<f64> {
    if clean.shape() != reconstructed.shape() {
        return Err(Error::shape(
            "mse_loss",
            format!("{:?} vs {:?}", clean.shape(), reconstructed.shape()),
        ));
    }
    let sum: f64 = clean
        .data()
        .iter()
        .zip(reconstructed.data())
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum();
    Ok(sum / clean.numel() as f64)
}

/// Adversarial term over the discriminator's probabilities on reconstructed
/// images: `sum_n [1 - log D_n]`. The `+1` per sample is a constant offset;
/// minimizing this equals minimizing `-sum log D` (identical gradients).
pub fn adversarial_loss(d_probs: &[f32]) -> f64 {
    d_probs
        .iter()
        .map(|&p| 1.0 - f64::from(p).max(PROB_FLOOR).ln())
        .sum()
}

/// Discriminator objective, batch-mean normalized:
/// `-mean[log D(real) + log(1 - D(fake))]`.
pub fn discriminator_loss(d_real: &[f32], d_fake: &[f32]) -> Result<f64> {
    if d_real.len() != d_fake.len() || d_real.is_empty() {
        return Err(Error::shape(
            "discriminator_loss",
            format!("{} real vs {} fake probabilities", d_real.len(), d_fake.len()),
        ));
    }
    let sum: f64 = d_real
        .iter()
        .zip(d_fake)
        .map(|(&r, &f)| {
            -(f64::from(r).max(PROB_FLOOR).ln() + (1.0 - f64::from(f)).max(PROB_FLOOR).ln())
        })
        .sum();
    Ok(sum / d_real.len() as f64)
}

/// Per-batch loss components. `total = xi1 * l_mse + xi2 * l_adv` exactly as
/// stored; `l_adv` is the batch-mean adversarial term ([`adversarial_loss`]
/// divided by the batch size, keeping it on the same scale as the MSE so
/// the 0.7/0.3 weighting is meaningful).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_mse: f64,
    pub l_adv: f64,
    pub l_d: f64,
}

impl LossBreakdown {
    pub(crate) fn compose(l_mse: f64, l_adv: f64, l_d: f64, xi1: f32, xi2: f32) -> Self {
        LossBreakdown {
            total: f64::from(xi1) * l_mse + f64::from(xi2) * l_adv,
            l_mse,
            l_adv,
            l_d,
        }
    }
}

/// Evaluates the fusion loss of a generator/discriminator pair on one
/// (clean, adversarial) batch, in inference mode. Returns the breakdown
/// used for logging; the discriminator loss is measured against the same
/// reconstructions.
pub fn generator_loss(
    clean: &Tensor,
    adversarial: &Tensor,
    generator: &Network,
    discriminator: &Network,
    xi1: f32,
    xi2: f32,
    mode: Parallelism,
) -> Result<LossBreakdown> {
    if xi1 < 0.0 || xi2 < 0.0 {
        return Err(Error::config("loss weights must be non-negative"));
    }
    let reconstructed = {
        let logits = generator.forward(adversarial, mode)?;
        logits.map(|v| 1.0 / (1.0 + (-v).exp()))
    };
    let l_mse = mse_loss(clean, &reconstructed)?;
    let d_fake: Vec<f32> = discriminator
        .forward(&reconstructed, mode)?
        .data()
        .iter()
        .map(|&z| 1.0 / (1.0 + (-z).exp()))
        .collect();
    let d_real: Vec<f32> = discriminator
        .forward(clean, mode)?
        .data()
        .iter()
        .map(|&z| 1.0 / (1.0 + (-z).exp()))
        .collect();
    let n = d_fake.len() as f64;
    let l_adv = adversarial_loss(&d_fake) / n;
    let l_d = discriminator_loss(&d_real, &d_fake)?;
    Ok(LossBreakdown::compose(l_mse, l_adv, l_d, xi1, xi2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mse_trivial_cases() {
        let a = Tensor::full(&[2, 2, 2, 1], 1.0);
        let b = Tensor::zeros(&[2, 2, 2, 1]);
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_loss(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn mse_matches_direct_summation() {
        let a = Tensor::from_vec(vec![1, 2, 2, 1], vec![0.1, 0.9, 0.4, 0.7]).unwrap();
        let b = Tensor::from_vec(vec![1, 2, 2, 1], vec![0.3, 0.5, 0.4, 0.1]).unwrap();
        let brute = (0.2f64 * 0.2 + 0.4 * 0.4 + 0.0 + 0.6 * 0.6) / 4.0;
        assert_relative_eq!(mse_loss(&a, &b).unwrap(), brute, max_relative = 1e-6);
    }

    #[test]
    fn adversarial_loss_endpoints() {
        // all probabilities 1 -> N (log 1 = 0)
        assert_relative_eq!(adversarial_loss(&[1.0; 5]), 5.0, max_relative = 1e-9);
        // two samples at 0.5 -> 2 + 2 ln 2
        assert_relative_eq!(
            adversarial_loss(&[0.5, 0.5]),
            2.0 + 2.0 * std::f64::consts::LN_2,
            max_relative = 1e-9
        );
    }

    #[test]
    fn adversarial_loss_identity_with_sum_log() {
        let probs = [0.3f32, 0.9, 0.5, 0.2];
        let n = probs.len() as f64;
        let sum_log: f64 = probs.iter().map(|&p| f64::from(p).ln()).sum();
        assert_relative_eq!(adversarial_loss(&probs) - n, -sum_log, max_relative = 1e-9);
    }

    #[test]
    fn adversarial_loss_guards_zero_probability() {
        let v = adversarial_loss(&[0.0]);
        assert!(v.is_finite());
        assert_relative_eq!(v, 1.0 - PROB_FLOOR.ln(), max_relative = 1e-9);
    }

    #[test]
    fn discriminator_loss_cases() {
        // perfect discriminator
        let v = discriminator_loss(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!(v.abs() < 1e-9, "{v}");
        // both sides at 0.5: 2 ln 2 per sample
        let v = discriminator_loss(&[0.5], &[0.5]).unwrap();
        assert_relative_eq!(v, 2.0 * std::f64::consts::LN_2, max_relative = 1e-9);
        // brute-force check on a random batch
        let real = [0.8f32, 0.6, 0.95];
        let fake = [0.3f32, 0.1, 0.5];
        let brute: f64 = real
            .iter()
            .zip(&fake)
            .map(|(&r, &f)| -(f64::from(r).ln() + (1.0 - f64::from(f)).ln()))
            .sum::<f64>()
            / 3.0;
        assert_relative_eq!(discriminator_loss(&real, &fake).unwrap(), brute, max_relative = 1e-6);
    }

    #[test]
    fn breakdown_recomposes_exactly() {
        let b = LossBreakdown::compose(0.25, 3.0, 1.0, 0.7, 0.3);
        assert_eq!(b.total, f64::from(0.7f32) * b.l_mse + f64::from(0.3f32) * b.l_adv);
        let content_only = LossBreakdown::compose(0.25, 3.0, 1.0, 0.7, 0.0);
        assert_eq!(content_only.total, f64::from(0.7f32) * 0.25);
    }
}
