//! APE-GAN training loop.
//!
//! Per batch: one discriminator Adam step on the standard GAN objective,
//! then two generator Adam steps on the fusion loss. Running the generator
//! twice keeps the discriminator loss from collapsing to zero. Adam uses
//! the DCGAN configuration (lr 2e-4, beta1 0.5).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::loss::{adversarial_loss, discriminator_loss, mse_loss, LossBreakdown, PROB_FLOOR};
use crate::gan::purify::{PurifierMeta, PurifierState};
use crate::models::ModelSpec;
use crate::nn::{adam_update, AdamState, ForwardCache, Network};
use crate::par::Parallelism;
use crate::rng::{derive, shuffle};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApeGanConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub xi1: f32,
    pub xi2: f32,
    pub seed: u64,
}

impl Default for ApeGanConfig {
    fn default() -> Self {
        ApeGanConfig {
            epochs: 2,
            batch_size: 64,
            learning_rate: 2e-4,
            xi1: 0.7,
            xi2: 0.3,
            seed: 1,
        }
    }
}

impl ApeGanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("apegan training needs epochs >= 1 and batch >= 1"));
        }
        if self.xi1 < 0.0 || self.xi2 < 0.0 {
            return Err(Error::config("loss weights must be non-negative"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Aligned (adversarial, clean) training pairs: `adversarial[k]` was
/// crafted from `clean[k]`.
#[derive(Debug, Clone)]
pub struct TrainingPairs {
    pub adversarial: Tensor,
    pub clean: Tensor,
}

impl TrainingPairs {
    pub fn new(adversarial: Tensor, clean: Tensor) -> Result<Self> {
        if adversarial.shape() != clean.shape() {
            return Err(Error::shape(
                "TrainingPairs",
                format!("{:?} vs {:?}", adversarial.shape(), clean.shape()),
            ));
        }
        Ok(TrainingPairs { adversarial, clean })
    }

    pub fn len(&self) -> usize {
        self.clean.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn sigmoid_slice(logits: &Tensor) -> Vec<f32> {
    logits.data().iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect()
}

/// Trains the purifier on (adversarial, clean) pairs. The loop never sees a
/// classifier; it needs no knowledge of any target model.
pub fn train_apegan(
    pairs: &TrainingPairs,
    generator_spec: &ModelSpec,
    discriminator_spec: &ModelSpec,
    config: &ApeGanConfig,
    mode: Parallelism,
) -> Result<PurifierState> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::config("apegan training needs at least one pair"));
    }
    let mut state = PurifierState::init(generator_spec.clone(), discriminator_spec.clone(), config.seed)?;

    let g_sizes: Vec<usize> = state.generator.trainable_params().iter().map(|t| t.numel()).collect();
    let d_sizes: Vec<usize> = state
        .discriminator
        .trainable_params()
        .iter()
        .map(|t| t.numel())
        .collect();
    let mut opt_g = AdamState::gan(config.learning_rate, &g_sizes);
    let mut opt_d = AdamState::gan(config.learning_rate, &d_sizes);

    let mut rng = derive(config.seed, "apegan");
    let mut indices: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut epoch_d_losses = Vec::with_capacity(config.epochs);
    let mut steps = 0usize;

    for epoch in 0..config.epochs {
        shuffle(&mut rng, &mut indices);
        let mut g_sum = 0f64;
        let mut d_sum = 0f64;
        let mut batches = 0usize;
        for batch_idx in indices.chunks(config.batch_size) {
            let x_adv = pairs.adversarial.gather(batch_idx);
            let x_clean = pairs.clean.gather(batch_idx);

            // --- discriminator step (generator output detached) ---
            let g_cache = state.generator.forward_train(&x_adv, &mut rng, mode)?;
            let g_img = g_cache.output().map(|z| 1.0 / (1.0 + (-z).exp()));
            let l_d = discriminator_step(&mut state.discriminator, &mut opt_d, &x_clean, &g_img, &mut rng, mode)?;

            // --- two generator steps; the first reuses the cached pass ---
            let breakdown1 = generator_step(
                &mut state.generator,
                &mut state.discriminator,
                &mut opt_g,
                g_cache,
                &g_img,
                &x_clean,
                config,
                &mut rng,
                mode,
            )?;
            let g_cache2 = state.generator.forward_train(&x_adv, &mut rng, mode)?;
            let g_img2 = g_cache2.output().map(|z| 1.0 / (1.0 + (-z).exp()));
            let breakdown2 = generator_step(
                &mut state.generator,
                &mut state.discriminator,
                &mut opt_g,
                g_cache2,
                &g_img2,
                &x_clean,
                config,
                &mut rng,
                mode,
            )?;

            let g_loss = (breakdown1.total + breakdown2.total) / 2.0;
            if !g_loss.is_finite() || !l_d.is_finite() {
                return Err(Error::Train {
                    epoch,
                    step: steps,
                    message: format!("generator loss {g_loss}, discriminator loss {l_d}"),
                });
            }
            g_sum += g_loss;
            d_sum += l_d;
            batches += 1;
            steps += 1;
        }
        epoch_losses.push(g_sum / batches as f64);
        epoch_d_losses.push(d_sum / batches as f64);
    }

    state.meta = PurifierMeta {
        source_attack: String::new(),
        eps: 0.0,
        dataset: String::new(),
        seed: config.seed,
        epochs: config.epochs,
        batch_size: config.batch_size,
        xi1: config.xi1,
        xi2: config.xi2,
        created: chrono::Utc::now().to_rfc3339(),
        epoch_losses,
        epoch_d_losses,
    };
    Ok(state)
}

/// One Adam step on `-mean[log D(real) + log(1 - D(fake))]`.
fn discriminator_step(
    disc: &mut Network,
    opt: &mut AdamState,
    x_real: &Tensor,
    x_fake: &Tensor,
    rng: &mut crate::rng::SeededRng,
    mode: Parallelism,
) -> Result<f64> {
    let b = x_real.batch() as f32;

    let cache_real = disc.forward_train(x_real, rng, mode)?;
    let p_real = sigmoid_slice(cache_real.output());
    // d/dz of -log(sigmoid(z)) = -(1 - p)
    let seed_real = Tensor::from_vec(
        cache_real.output().shape().to_vec(),
        p_real.iter().map(|&p| -(1.0 - p) / b).collect(),
    )?;
    let (_, grads_real) = disc.backward(&cache_real, &seed_real, true, mode);

    let cache_fake = disc.forward_train(x_fake, rng, mode)?;
    let p_fake = sigmoid_slice(cache_fake.output());
    // d/dz of -log(1 - sigmoid(z)) = p
    let seed_fake = Tensor::from_vec(
        cache_fake.output().shape().to_vec(),
        p_fake.iter().map(|&p| p / b).collect(),
    )?;
    let (_, grads_fake) = disc.backward(&cache_fake, &seed_fake, true, mode);

    let mut grads = grads_real.expect("d grads");
    for (g, gf) in grads.iter_mut().zip(grads_fake.expect("d grads")) {
        for (v, &vf) in g.data_mut().iter_mut().zip(gf.data()) {
            *v += vf;
        }
    }
    let grad_refs: Vec<&Tensor> = grads.iter().collect();
    let mut params = disc.trainable_params_mut();
    adam_update(opt, &mut params, &grad_refs)?;

    discriminator_loss(&p_real, &p_fake)
}

/// One Adam step on the fusion loss `xi1 * mse + xi2 * mean[1 - log D(G)]`.
#[allow(clippy::too_many_arguments)]
fn generator_step(
    generator: &mut Network,
    disc: &mut Network,
    opt: &mut AdamState,
    g_cache: ForwardCache,
    g_img: &Tensor,
    x_clean: &Tensor,
    config: &ApeGanConfig,
    rng: &mut crate::rng::SeededRng,
    mode: Parallelism,
) -> Result<LossBreakdown> {
    let b = x_clean.batch() as f32;
    let numel = g_img.numel() as f32;

    // adversarial half: backprop -log D through the (train-mode) discriminator
    let d_cache = disc.forward_train(g_img, rng, mode)?;
    let p = sigmoid_slice(d_cache.output());
    let seed_d = Tensor::from_vec(
        d_cache.output().shape().to_vec(),
        p.iter().map(|&pv| config.xi2 * -(1.0 - pv) / b).collect(),
    )?;
    let (d_input_grad, _) = disc.backward(&d_cache, &seed_d, false, mode);

    // content half on the reconstruction, then chain through the sigmoid
    let mut dg_img = d_input_grad;
    for (j, v) in dg_img.data_mut().iter_mut().enumerate() {
        *v += config.xi1 * 2.0 * (g_img.data()[j] - x_clean.data()[j]) / numel;
        let y = g_img.data()[j];
        *v *= y * (1.0 - y);
    }
    let (_, g_grads) = generator.backward(&g_cache, &dg_img, true, mode);
    let g_grads = g_grads.expect("g grads");
    let grad_refs: Vec<&Tensor> = g_grads.iter().collect();
    let mut params = generator.trainable_params_mut();
    adam_update(opt, &mut params, &grad_refs)?;

    let l_mse = mse_loss(x_clean, g_img)?;
    let l_adv = adversarial_loss(&p) / f64::from(b);
    let l_d = p
        .iter()
        .map(|&pv| -f64::from(pv).max(PROB_FLOOR).ln())
        .sum::<f64>()
        / f64::from(b);
    Ok(LossBreakdown::compose(l_mse, l_adv, l_d, config.xi1, config.xi2))
}
