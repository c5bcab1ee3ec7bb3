//! Purifier training smoke tests and loss-identity checks on miniature
//! networks.

use apegan::gan::{train_apegan, ApeGanConfig, TrainingPairs};
use apegan::models::ModelSpec;
use apegan::nn::LayerSpec;
use apegan::par::Parallelism;
use apegan::rng::seeded;
use apegan::Tensor;
use rand::Rng;

const PAR: Parallelism = Parallelism::Parallel;

fn tiny_generator() -> ModelSpec {
    use LayerSpec::*;
    ModelSpec {
        name: "G_tiny".into(),
        input: (8, 8, 1),
        layers: vec![
            ConvS2 { out_ch: 8, kh: 3, kw: 3 },
            Batchnorm,
            Lrelu { slope: 0.2 },
            ConvS2 { out_ch: 16, kh: 3, kw: 3 },
            Batchnorm,
            Lrelu { slope: 0.2 },
            DeconvS2 { out_ch: 8, kh: 3, kw: 3 },
            Batchnorm,
            Lrelu { slope: 0.2 },
            DeconvS2 { out_ch: 1, kh: 3, kw: 3 },
            Sigmoid,
        ],
    }
}

fn tiny_discriminator() -> ModelSpec {
    use LayerSpec::*;
    ModelSpec {
        name: "D_tiny".into(),
        input: (8, 8, 1),
        layers: vec![
            ConvS2 { out_ch: 8, kh: 3, kw: 3 },
            Lrelu { slope: 0.2 },
            ConvS2 { out_ch: 16, kh: 3, kw: 3 },
            Batchnorm,
            Lrelu { slope: 0.2 },
            Dense { width: 1 },
            Sigmoid,
        ],
    }
}

/// Clean images: smooth blobs. Adversarial: the same plus strong seeded
/// pixel noise.
fn synthetic_pairs(n: usize, seed: u64) -> TrainingPairs {
    let mut rng = seeded(seed);
    let mut clean = Vec::with_capacity(n * 64);
    for _ in 0..n {
        let cx: f32 = rng.random_range(2.0..6.0);
        let cy: f32 = rng.random_range(2.0..6.0);
        for y in 0..8 {
            for x in 0..8 {
                let d = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt();
                clean.push((1.0 - d / 6.0).clamp(0.0, 1.0));
            }
        }
    }
    let clean = Tensor::from_vec(vec![n, 8, 8, 1], clean).unwrap();
    let mut adv = clean.clone();
    for v in adv.data_mut() {
        let flip: f32 = rng.random_range(-0.3f32..0.3);
        *v = (*v + flip).clamp(0.0, 1.0);
    }
    TrainingPairs::new(adv, clean).unwrap()
}

#[test]
fn training_improves_reconstruction_and_discriminator_separates() {
    let pairs = synthetic_pairs(512, 3);
    // tiny problem, so many epochs stand in for dataset scale
    let cfg = ApeGanConfig {
        epochs: 30,
        batch_size: 32,
        ..ApeGanConfig::default()
    };
    let state = train_apegan(&pairs, &tiny_generator(), &tiny_discriminator(), &cfg, PAR).unwrap();

    // held-out pairs: purification moves adversarial images toward clean
    let held = synthetic_pairs(128, 99);
    let purified = state.purify(&held.adversarial, PAR).unwrap();
    let before: f64 = held
        .adversarial
        .perturbation_norms(&held.clean)
        .unwrap()
        .iter()
        .map(|n| n.1)
        .sum();
    let after: f64 = purified
        .perturbation_norms(&held.clean)
        .unwrap()
        .iter()
        .map(|n| n.1)
        .sum();
    assert!(
        after < before,
        "purification did not reduce distance: {after} vs {before}"
    );

    // discriminator puts more probability on real clean images than on the
    // outputs of an untrained generator
    let fresh = apegan::gan::PurifierState::init(tiny_generator(), tiny_discriminator(), 71).unwrap();
    let fresh_out = fresh.purify(&held.adversarial, PAR).unwrap();
    let p_real: f32 = state.discriminate(&held.clean, PAR).unwrap().iter().sum::<f32>() / 128.0;
    let p_fresh: f32 = state.discriminate(&fresh_out, PAR).unwrap().iter().sum::<f32>() / 128.0;
    assert!(
        p_real > p_fresh,
        "mean D(real) {p_real} should exceed D(untrained G output) {p_fresh}"
    );

    // loss history recorded per epoch
    assert_eq!(state.meta.epoch_losses.len(), 30);
    assert!(state.meta.epoch_losses.iter().all(|l| l.is_finite()));
}

#[test]
fn purify_preserves_shape_range_and_is_deterministic() {
    let state = apegan::gan::PurifierState::init(tiny_generator(), tiny_discriminator(), 5).unwrap();
    let x = synthetic_pairs(16, 1).adversarial;
    let a = state.purify(&x, PAR).unwrap();
    assert_eq!(a.shape(), x.shape());
    assert!(a.min() >= 0.0 && a.max() <= 1.0);
    let b = state.purify(&x, PAR).unwrap();
    assert_eq!(a.data(), b.data());
    // idempotent in range: purifying a purified batch stays valid
    let c = state.purify(&a, PAR).unwrap();
    assert_eq!(c.shape(), x.shape());
    assert!(c.min() >= 0.0 && c.max() <= 1.0);
}

#[test]
fn purifier_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = synthetic_pairs(64, 11);
    let cfg = ApeGanConfig {
        epochs: 1,
        batch_size: 16,
        ..ApeGanConfig::default()
    };
    let state = train_apegan(&pairs, &tiny_generator(), &tiny_discriminator(), &cfg, PAR).unwrap();
    state.save(dir.path()).unwrap();
    let back = apegan::gan::PurifierState::load(dir.path()).unwrap();
    let x = synthetic_pairs(8, 2).adversarial;
    assert_eq!(
        state.purify(&x, PAR).unwrap().data(),
        back.purify(&x, PAR).unwrap().data()
    );
    assert_eq!(back.meta.epochs, 1);
}

/// The adversarial term's "+1" constant is gradient-inert: backpropagating
/// `sum(1 - log D)` and `-sum(log D)` through the generator yields
/// identical gradients.
#[test]
fn adversarial_loss_constant_is_gradient_inert() {
    let g_spec = tiny_generator();
    let d_spec = tiny_discriminator();
    let state = apegan::gan::PurifierState::init(g_spec, d_spec, 13).unwrap();
    let x = synthetic_pairs(8, 21).adversarial;

    let grads_for = |use_one_minus: bool| -> Vec<Tensor> {
        let g_cache = state.generator.forward_cached(&x, PAR).unwrap();
        let g_img = g_cache.output().map(|z| 1.0 / (1.0 + (-z).exp()));
        let d_cache = state.discriminator.forward_cached(&g_img, PAR).unwrap();
        let probs: Vec<f32> = d_cache
            .output()
            .data()
            .iter()
            .map(|&z| 1.0 / (1.0 + (-z).exp()))
            .collect();
        // d loss / d prob, from each formula as written
        let dl_dp: Vec<f32> = probs
            .iter()
            .map(|&p| {
                if use_one_minus {
                    // d/dp of (1 - ln p)
                    -1.0 / p.max(1e-12)
                } else {
                    // d/dp of (-ln p)
                    -(p.max(1e-12)).recip()
                }
            })
            .collect();
        // chain through the discriminator head sigmoid
        let seed = Tensor::from_vec(
            d_cache.output().shape().to_vec(),
            dl_dp
                .iter()
                .zip(&probs)
                .map(|(&d, &p)| d * p * (1.0 - p))
                .collect(),
        )
        .unwrap();
        let (d_input_grad, _) = state.discriminator.backward(&d_cache, &seed, false, PAR);
        let mut dg = d_input_grad;
        for (v, &y) in dg.data_mut().iter_mut().zip(g_img.data()) {
            *v *= y * (1.0 - y);
        }
        let (_, grads) = state.generator.backward(&g_cache, &dg, true, PAR);
        grads.unwrap()
    };

    let a = grads_for(true);
    let b = grads_for(false);
    for (ga, gb) in a.iter().zip(&b) {
        for (&va, &vb) in ga.data().iter().zip(gb.data()) {
            assert!((va - vb).abs() <= 1e-6, "{va} vs {vb}");
        }
    }
}

#[test]
fn generator_loss_reports_consistent_breakdown() {
    let state = apegan::gan::PurifierState::init(tiny_generator(), tiny_discriminator(), 17).unwrap();
    let pairs = synthetic_pairs(16, 31);
    let b = apegan::gan::generator_loss(
        &pairs.clean,
        &pairs.adversarial,
        &state.generator,
        &state.discriminator,
        0.7,
        0.3,
        PAR,
    )
    .unwrap();
    assert_eq!(b.total, f64::from(0.7f32) * b.l_mse + f64::from(0.3f32) * b.l_adv);
    // content-only ablation
    let c = apegan::gan::generator_loss(
        &pairs.clean,
        &pairs.adversarial,
        &state.generator,
        &state.discriminator,
        0.7,
        0.0,
        PAR,
    )
    .unwrap();
    assert_eq!(c.total, f64::from(0.7f32) * c.l_mse);
}
