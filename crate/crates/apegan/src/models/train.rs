//! Classifier training: standard cross-entropy and adversarial training.

use serde::{Deserialize, Serialize};

use crate::attacks::fgsm_perturb;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::{AdversarialMeta, Classifier, ModelSpec, TrainMeta};
use crate::nn::{adam_update, cross_entropy, cross_entropy_grad, AdamState};
use crate::par::Parallelism;
use crate::rng::{derive, shuffle};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("training needs at least one epoch"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }
}

/// FGSM blend for adversarial training: each step minimizes
/// `alpha_blend * J(X, y) + (1 - alpha_blend) * J(X_fgsm, y)` with the
/// adversarial batch regenerated from the current parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialTrainConfig {
    pub eps: f32,
    pub alpha_blend: f32,
}

impl Default for AdversarialTrainConfig {
    fn default() -> Self {
        AdversarialTrainConfig {
            eps: 0.3,
            alpha_blend: 0.5,
        }
    }
}

impl AdversarialTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::config("adversarial training eps must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.alpha_blend) {
            return Err(Error::config("alpha_blend must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Trains `spec` on `train` with cross-entropy + Adam, recording the clean
/// test error. Deterministic per seed (up to float reduction order).
pub fn train_classifier(
    spec: &ModelSpec,
    train: &LabeledDataset,
    test: &LabeledDataset,
    config: &TrainConfig,
    mode: Parallelism,
) -> Result<Classifier> {
    train_impl(spec, train, test, config, None, mode)
}

/// Adversarial training per `adv`; with `alpha_blend = 1` the objective and
/// the parameter trajectory reduce exactly to [`train_classifier`].
pub fn adversarial_training(
    spec: &ModelSpec,
    train: &LabeledDataset,
    test: &LabeledDataset,
    config: &TrainConfig,
    adv: AdversarialTrainConfig,
    mode: Parallelism,
) -> Result<Classifier> {
    adv.validate()?;
    train_impl(spec, train, test, config, Some(adv), mode)
}

fn train_impl(
    spec: &ModelSpec,
    train: &LabeledDataset,
    test: &LabeledDataset,
    config: &TrainConfig,
    adv: Option<AdversarialTrainConfig>,
    mode: Parallelism,
) -> Result<Classifier> {
    config.validate()?;
    if spec.input != (train.images.shape()[1], train.images.shape()[2], train.images.shape()[3]) {
        return Err(Error::shape(
            "train_classifier",
            format!("model expects {:?}, dataset is {:?}", spec.input, &train.images.shape()[1..]),
        ));
    }
    let mut clf = Classifier::init(spec.clone(), config.seed)?;
    let sizes: Vec<usize> = clf.net.trainable_params().iter().map(|t| t.numel()).collect();
    let mut opt = AdamState::classifier(config.learning_rate, &sizes);
    let mut rng = derive(config.seed, "train");
    let mut indices: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        shuffle(&mut rng, &mut indices);
        let mut epoch_loss = 0f64;
        let mut batches = 0usize;
        for (step, batch_idx) in indices.chunks(config.batch_size).enumerate() {
            let images = train.images.gather(batch_idx);
            let labels: Vec<usize> = batch_idx.iter().map(|&i| train.labels[i]).collect();

            // adversarial half of the blend, from the current parameters
            let blend = adv.map(|a| a.alpha_blend).unwrap_or(1.0);
            let adv_images = match adv {
                Some(a) if a.alpha_blend < 1.0 => {
                    Some(fgsm_perturb(&clf.net, &images, &labels, a.eps, mode)?)
                }
                _ => None,
            };

            let cache = clf.net.forward_train(&images, &mut rng, mode)?;
            let loss = cross_entropy(cache.output(), &labels)?;
            let seed_grad = cross_entropy_grad(cache.output(), &labels)?;
            let (_, grads) = clf.net.backward(&cache, &seed_grad, true, mode);
            let mut grads = grads.expect("param grads");

            let mut total_loss = loss;
            if let Some(adv_images) = adv_images {
                let cache_adv = clf.net.forward_train(&adv_images, &mut rng, mode)?;
                let loss_adv = cross_entropy(cache_adv.output(), &labels)?;
                let seed_adv = cross_entropy_grad(cache_adv.output(), &labels)?;
                let (_, grads_adv) = clf.net.backward(&cache_adv, &seed_adv, true, mode);
                let grads_adv = grads_adv.expect("param grads");
                for (g, ga) in grads.iter_mut().zip(&grads_adv) {
                    for (v, &va) in g.data_mut().iter_mut().zip(ga.data()) {
                        *v = blend * *v + (1.0 - blend) * va;
                    }
                }
                total_loss = f64::from(blend) * loss + f64::from(1.0 - blend) * loss_adv;
            }

            if !total_loss.is_finite() {
                return Err(Error::Train {
                    epoch,
                    step,
                    message: format!("loss became {total_loss}"),
                });
            }
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            let mut params = clf.net.trainable_params_mut();
            adam_update(&mut opt, &mut params, &grad_refs)?;

            epoch_loss += total_loss;
            batches += 1;
        }
        epoch_losses.push(epoch_loss / batches as f64);
    }

    let clean_error = crate::models::error_rate(&clf, &test.images, &test.labels, None, mode)?;
    clf.meta = TrainMeta {
        epochs: config.epochs,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
        seed: config.seed,
        clean_error: Some(clean_error),
        adversarial: adv.map(|a| AdversarialMeta {
            eps: a.eps,
            alpha_blend: a.alpha_blend,
        }),
        epoch_losses,
    };
    Ok(clf)
}
