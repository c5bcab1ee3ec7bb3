//! White-box adversarial example generators.
//!
//! All attacks leave the original batch untouched, return images clipped to
//! the valid `[0, 1]` range, and re-verify their success flags with a fresh
//! forward pass. Sample-level work is vectorized across the batch against a
//! frozen model.

mod cw;
mod deepfool;
mod fgsm;
mod generate;
mod jsma;
mod lbfgs;

pub use cw::cw_l2;
pub use deepfool::deepfool;
pub use fgsm::{fgsm, fgsm_perturb, iterative_gradient_sign};
pub use generate::{generate_set, select_indices};
pub use jsma::jsma;
pub use lbfgs::lbfgs_attack;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::par::Parallelism;
use crate::rng::derive;
use crate::tensor::Tensor;

/// Registry of attack names as stored in manifests.
pub const ATTACK_NAMES: [&str; 6] = ["fgsm", "igs", "lbfgs", "deepfool", "jsma", "cw_l2"];

/// Attack procedure selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Igs,
    Lbfgs,
    Deepfool,
    Jsma,
    CwL2,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Igs => "igs",
            AttackKind::Lbfgs => "lbfgs",
            AttackKind::Deepfool => "deepfool",
            AttackKind::Jsma => "jsma",
            AttackKind::CwL2 => "cw_l2",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "fgsm" => AttackKind::Fgsm,
            "igs" => AttackKind::Igs,
            "lbfgs" => AttackKind::Lbfgs,
            "deepfool" => AttackKind::Deepfool,
            "jsma" => AttackKind::Jsma,
            "cw_l2" => AttackKind::CwL2,
            _ => {
                return Err(Error::UnknownName {
                    name: name.to_string(),
                    known: ATTACK_NAMES.join(", "),
                })
            }
        })
    }
}

/// How targeted attacks pick the class to steer toward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetPolicy {
    /// Uniformly random class different from the true label, seeded.
    #[default]
    RandomOther,
    /// A fixed class; samples already labeled with it keep their nearest
    /// alternative `(c + 1) % 10`.
    Fixed(usize),
}

/// All attack parameters. Each procedure reads its own subset; the
/// defaults follow common attack-library settings with iteration budgets
/// sized for repeated desk-scale runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// L-inf budget in pixel units.
    pub eps: f32,
    /// Per-step size for the iterative gradient sign.
    pub alpha: f32,
    /// Iteration count for the iterative gradient sign.
    pub n_iter: usize,

    /// L-BFGS: lambda line-search range (log-bisection) and step count.
    pub lambda_min: f32,
    pub lambda_max: f32,
    pub lambda_steps: usize,
    /// L-BFGS: inner solver budget and curvature memory.
    pub inner_iters: usize,
    pub memory: usize,

    /// CW: confidence margin.
    pub kappa: f32,
    /// CW: inner Adam learning rate and iteration budget.
    pub cw_lr: f32,
    pub cw_iters: usize,
    /// CW: binary-search steps over the constant c.
    pub cw_search_steps: usize,
    pub cw_initial_c: f32,
    pub cw_c_max: f32,
    /// CW: extra iterations granted to a sample after its first success
    /// before it retires from the batch.
    pub cw_polish_iters: usize,

    /// DeepFool: boundary overshoot and iteration cap.
    pub overshoot: f32,
    pub max_iter: usize,

    /// JSMA: per-pixel delta (saturating) and modified-pixel budget as a
    /// fraction of the pixel count.
    pub theta: f32,
    pub gamma: f32,

    pub target_policy: TargetPolicy,
    /// Seed for target-class sampling.
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            eps: 0.3,
            alpha: 0.1,
            n_iter: 2,
            lambda_min: 1e-3,
            lambda_max: 1e3,
            lambda_steps: 10,
            inner_iters: 30,
            memory: 10,
            kappa: 0.0,
            cw_lr: 0.01,
            cw_iters: 1000,
            cw_search_steps: 6,
            cw_initial_c: 1e-3,
            cw_c_max: 1e6,
            cw_polish_iters: 100,
            overshoot: 0.02,
            max_iter: 50,
            theta: 1.0,
            gamma: 0.1,
            target_policy: TargetPolicy::RandomOther,
            seed: 7,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, kind: AttackKind) -> Result<()> {
        if self.eps < 0.0 || !self.eps.is_finite() {
            return Err(Error::config(format!("eps must be >= 0, got {}", self.eps)));
        }
        match kind {
            AttackKind::Igs => {
                if self.n_iter == 0 {
                    return Err(Error::config("igs needs n_iter >= 1"));
                }
                if !(self.alpha > 0.0) || self.alpha > self.eps {
                    return Err(Error::config(format!(
                        "igs needs 0 < alpha <= eps, got alpha={} eps={}",
                        self.alpha, self.eps
                    )));
                }
            }
            AttackKind::Jsma => {
                if !(self.theta > 0.0 && self.theta <= 1.0) {
                    return Err(Error::config("jsma needs theta in (0, 1]"));
                }
                if !(0.0..=1.0).contains(&self.gamma) {
                    return Err(Error::config("jsma needs gamma in [0, 1]"));
                }
            }
            AttackKind::CwL2 => {
                if self.kappa < 0.0 {
                    return Err(Error::config("cw needs kappa >= 0"));
                }
            }
            AttackKind::Deepfool => {
                if self.max_iter == 0 {
                    return Err(Error::config("deepfool needs max_iter >= 1"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// The parameters relevant to `kind`, for manifests.
    pub fn params_json(&self, kind: AttackKind) -> serde_json::Value {
        match kind {
            AttackKind::Fgsm => serde_json::json!({ "eps": self.eps }),
            AttackKind::Igs => {
                serde_json::json!({ "eps": self.eps, "alpha": self.alpha, "n_iter": self.n_iter })
            }
            AttackKind::Lbfgs => serde_json::json!({
                "lambda_min": self.lambda_min,
                "lambda_max": self.lambda_max,
                "lambda_steps": self.lambda_steps,
                "inner_iters": self.inner_iters,
                "memory": self.memory,
                "seed": self.seed,
            }),
            AttackKind::Deepfool => {
                serde_json::json!({ "overshoot": self.overshoot, "max_iter": self.max_iter })
            }
            AttackKind::Jsma => {
                serde_json::json!({ "theta": self.theta, "gamma": self.gamma, "seed": self.seed })
            }
            AttackKind::CwL2 => serde_json::json!({
                "kappa": self.kappa,
                "lr": self.cw_lr,
                "iters": self.cw_iters,
                "search_steps": self.cw_search_steps,
                "initial_c": self.cw_initial_c,
                "c_max": self.cw_c_max,
                "polish_iters": self.cw_polish_iters,
            }),
        }
    }
}

/// Adversarial batch with per-sample outcome metadata.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub images: Tensor,
    /// Misclassified vs the true label (non-targeted) or classified as the
    /// target (targeted), re-checked with a fresh forward pass.
    pub success: Vec<bool>,
    /// `(l0, l2, linf)` of the perturbation against the exact originals.
    pub norms: Vec<(usize, f64, f32)>,
    /// Iterations spent per sample.
    pub iterations: Vec<usize>,
}

impl AttackResult {
    /// Assembles a result, recomputing success flags from a fresh forward
    /// pass: misclassification vs `y_true`, or `pred == target` when
    /// `targets` is given.
    pub fn assemble(
        net: &Network,
        originals: &Tensor,
        adversarial: Tensor,
        y_true: &[usize],
        targets: Option<&[usize]>,
        iterations: Vec<usize>,
        mode: Parallelism,
    ) -> Result<AttackResult> {
        let preds = crate::models::predictions(net, &adversarial, mode)?;
        let success = match targets {
            Some(t) => preds.iter().zip(t).map(|(p, t)| p == t).collect(),
            None => preds.iter().zip(y_true).map(|(p, l)| p != l).collect(),
        };
        let norms = adversarial.perturbation_norms(originals)?;
        Ok(AttackResult {
            images: adversarial,
            success,
            norms,
            iterations,
        })
    }

    pub fn success_count(&self) -> usize {
        self.success.iter().filter(|&&s| s).count()
    }
}

/// Projects `a` onto the L-inf ball of radius `eps` around `x`, then onto
/// the valid image range: `min(max(a, x - eps), x + eps)` clipped to `[0, 1]`.
pub fn clip_neighborhood(a: &Tensor, x: &Tensor, eps: f32) -> Result<Tensor> {
    if a.shape() != x.shape() {
        return Err(Error::shape(
            "clip_neighborhood",
            format!("{:?} vs {:?}", a.shape(), x.shape()),
        ));
    }
    let mut out = a.clone();
    for (v, &orig) in out.data_mut().iter_mut().zip(x.data()) {
        *v = v.clamp(orig - eps, orig + eps).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// `sign` with the `sign(0) = 0` convention.
#[inline]
pub(crate) fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Samples a target class per the policy, never equal to the true label.
pub(crate) fn pick_targets(labels: &[usize], classes: usize, policy: TargetPolicy, seed: u64) -> Vec<usize> {
    use rand::Rng;
    let mut rng = derive(seed, "targets");
    labels
        .iter()
        .map(|&y| match policy {
            TargetPolicy::RandomOther => {
                let t = rng.random_range(0..classes - 1);
                if t >= y {
                    t + 1
                } else {
                    t
                }
            }
            TargetPolicy::Fixed(c) => {
                if c == y {
                    (c + 1) % classes
                } else {
                    c
                }
            }
        })
        .collect()
}

/// Attacks process sets in slices of this many samples to bound activation
/// memory; chunking never changes results.
pub(crate) const ATTACK_BATCH: usize = 200;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_identity_cases() {
        let x = Tensor::from_vec(vec![1, 1, 1, 3], vec![0.2, 0.5, 0.8]).unwrap();
        // A = X stays X
        assert_eq!(clip_neighborhood(&x, &x, 0.3).unwrap().data(), x.data());
        // eps = 0 collapses to X
        let a = Tensor::from_vec(vec![1, 1, 1, 3], vec![0.9, 0.1, 0.4]).unwrap();
        assert_eq!(clip_neighborhood(&a, &x, 0.0).unwrap().data(), x.data());
    }

    #[test]
    fn clip_hits_ball_surface() {
        let x = Tensor::from_vec(vec![1, 1, 1, 1], vec![0.5]).unwrap();
        let a = Tensor::from_vec(vec![1, 1, 1, 1], vec![0.9]).unwrap();
        let clipped = clip_neighborhood(&a, &x, 0.3).unwrap();
        assert!((clipped.data()[0] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn clip_respects_image_range() {
        let x = Tensor::from_vec(vec![1, 1, 1, 2], vec![0.05, 0.95]).unwrap();
        let a = Tensor::from_vec(vec![1, 1, 1, 2], vec![-0.4, 1.4]).unwrap();
        let clipped = clip_neighborhood(&a, &x, 0.3).unwrap();
        assert_eq!(clipped.data(), &[0.0, 1.0]);
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(3.2), 1.0);
        assert_eq!(sign(-0.1), -1.0);
    }

    #[test]
    fn targets_never_equal_label() {
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let targets = pick_targets(&labels, 10, TargetPolicy::RandomOther, 3);
        for (&y, &t) in labels.iter().zip(&targets) {
            assert_ne!(y, t);
            assert!(t < 10);
        }
        let fixed = pick_targets(&labels, 10, TargetPolicy::Fixed(4), 3);
        for (&y, &t) in labels.iter().zip(&fixed) {
            assert_ne!(y, t);
            if y != 4 {
                assert_eq!(t, 4);
            }
        }
    }
}
