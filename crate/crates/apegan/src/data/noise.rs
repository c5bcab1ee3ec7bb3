//! Benign Gaussian perturbation.

use rand::Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

/// Adds i.i.d. Gaussian noise with the given mean and *variance* (not
/// standard deviation), then clips to `[0, 1]`. Deterministic per seed.
pub fn add_gaussian_noise(batch: &Tensor, mean: f32, variance: f32, seed: u64) -> Result<Tensor> {
    if variance < 0.0 || !variance.is_finite() {
        return Err(Error::config(format!("noise variance must be >= 0, got {variance}")));
    }
    let mut out = batch.clone();
    if variance == 0.0 {
        if mean != 0.0 {
            for v in out.data_mut() {
                *v = (*v + mean).clamp(0.0, 1.0);
            }
        }
        return Ok(out);
    }
    let dist = Normal::new(mean, variance.sqrt())
        .map_err(|e| Error::config(format!("invalid noise distribution: {e}")))?;
    let mut rng = seeded(seed);
    for v in out.data_mut() {
        *v = (*v + rng.sample(dist)).clamp(0.0, 1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_is_identity() {
        let x = Tensor::from_vec(vec![1, 2, 2, 1], vec![0.1, 0.5, 0.9, 1.0]).unwrap();
        let y = add_gaussian_noise(&x, 0.0, 0.0, 9).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn negative_variance_rejected() {
        let x = Tensor::zeros(&[1, 2, 2, 1]);
        assert!(add_gaussian_noise(&x, 0.0, -0.1, 9).is_err());
    }

    #[test]
    fn sample_variance_matches_request() {
        // mid-gray input avoids clipping, so the sample variance of the
        // added noise estimates the configured variance
        let x = Tensor::full(&[1, 100, 100, 1], 0.5);
        let y = add_gaussian_noise(&x, 0.0, 0.05, 4).unwrap();
        let diffs: Vec<f64> = y
            .data()
            .iter()
            .zip(x.data())
            .map(|(&a, &b)| f64::from(a - b))
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / diffs.len() as f64;
        assert!((var - 0.05).abs() < 0.05 * 0.05, "sample variance {var}");
        assert!(mean.abs() < 0.005, "sample mean {mean}");
    }

    #[test]
    fn fixed_seed_reproduces() {
        let x = Tensor::full(&[1, 10, 10, 1], 0.5);
        let a = add_gaussian_noise(&x, 0.0, 0.05, 77).unwrap();
        let b = add_gaussian_noise(&x, 0.0, 0.05, 77).unwrap();
        assert_eq!(a.data(), b.data());
        let c = add_gaussian_noise(&x, 0.0, 0.05, 78).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn output_is_clipped() {
        let x = Tensor::full(&[1, 50, 50, 1], 0.98);
        let y = add_gaussian_noise(&x, 0.0, 0.05, 3).unwrap();
        assert!(y.max() <= 1.0 && y.min() >= 0.0);
    }
}
