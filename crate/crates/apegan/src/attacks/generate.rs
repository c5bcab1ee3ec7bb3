//! Batch orchestration: run an attack over a dataset subset and persist the
//! result with full provenance.

use crate::attacks::{
    cw_l2, deepfool, fgsm, iterative_gradient_sign, jsma, lbfgs_attack, pick_targets, AttackConfig,
    AttackKind, AttackResult,
};
use crate::data::{AdversarialSet, LabeledDataset, Manifest};
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::par::Parallelism;
use crate::rng::{derive, shuffle};

/// Deterministic subset selection: a seeded shuffle of the dataset indices,
/// first `count` taken, returned in ascending order. The identity when
/// `count` covers the whole set.
pub fn select_indices(len: usize, count: usize, seed: u64) -> Vec<usize> {
    if count >= len {
        return (0..len).collect();
    }
    let mut indices: Vec<usize> = (0..len).collect();
    let mut rng = derive(seed, "subset");
    shuffle(&mut rng, &mut indices);
    indices.truncate(count);
    indices.sort_unstable();
    indices
}

/// Runs `kind` against `model` on a seeded `count`-sample subset of
/// `dataset` and stamps the manifest with the model digest and the full
/// attack configuration. Per-sample failures are recorded in the manifest,
/// not raised.
pub fn generate_set(
    kind: AttackKind,
    model: &Classifier,
    dataset: &LabeledDataset,
    dataset_name: &str,
    config: &AttackConfig,
    count: usize,
    seed: u64,
    mode: Parallelism,
) -> Result<(AdversarialSet, AttackResult)> {
    config.validate(kind)?;
    if count > dataset.len() {
        return Err(Error::config(format!(
            "requested {count} samples from a {}-sample dataset",
            dataset.len()
        )));
    }
    let indices = select_indices(dataset.len(), count, seed);
    let subset = dataset.select(&indices);

    let result = run_attack(kind, model, &subset.images, &subset.labels, config, mode)?;

    let failed_indices: Vec<u64> = result
        .success
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| (!s).then_some(i as u64))
        .collect();
    let manifest = Manifest {
        attack: kind.name().to_string(),
        params: config.params_json(kind),
        source_model: model.spec.name.clone(),
        model_digest: model.digest(),
        dataset: dataset_name.to_string(),
        split: subset.split,
        count: subset.len(),
        created: chrono::Utc::now().to_rfc3339(),
        tool_version: crate::TOOL_VERSION.to_string(),
        indices: (indices.len() != dataset.len())
            .then(|| indices.iter().map(|&i| i as u64).collect()),
        failed_indices,
    };
    let set = AdversarialSet::new(result.images.clone(), subset.labels.clone(), manifest)?;
    Ok((set, result))
}

/// Dispatches to the attack implementation.
pub fn run_attack(
    kind: AttackKind,
    model: &Classifier,
    images: &crate::tensor::Tensor,
    labels: &[usize],
    config: &AttackConfig,
    mode: Parallelism,
) -> Result<AttackResult> {
    config.validate(kind)?;
    let net = &model.net;
    let classes = {
        let s = net.output_shape();
        s.0 * s.1 * s.2
    };
    match kind {
        AttackKind::Fgsm => fgsm(net, images, labels, config.eps, mode),
        AttackKind::Igs => iterative_gradient_sign(
            net,
            images,
            labels,
            config.eps,
            config.alpha,
            config.n_iter,
            mode,
        ),
        AttackKind::Deepfool => deepfool(net, images, labels, config.max_iter, config.overshoot, mode),
        AttackKind::Lbfgs => {
            let targets = pick_targets(labels, classes, config.target_policy, config.seed);
            lbfgs_attack(net, images, labels, &targets, config, mode)
        }
        AttackKind::Jsma => {
            let targets = pick_targets(labels, classes, config.target_policy, config.seed);
            jsma(net, images, labels, &targets, config.theta, config.gamma, mode)
        }
        AttackKind::CwL2 => cw_l2(net, images, labels, config.kappa, config, mode),
    }
}
