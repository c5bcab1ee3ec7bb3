//! The staged, resumable experiment pipeline.
//!
//! Stage outputs are content-addressed by a hash of the configuration slice
//! that produced them, so a rerun with `resume` picks up finished stages
//! and recomputes only what changed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::attacks::{generate_set, AttackConfig, AttackKind};
use crate::data::{add_gaussian_noise, AdversarialSet, LabeledDataset};
use crate::error::{Error, Result};
use crate::gan::{train_apegan, PurifierState, TrainingPairs};
use crate::harness::{config_hash, ComboRow, EvalReport, ExperimentConfig, ReportRow};
use crate::models::{
    adversarial_training, builtin_spec, error_rate, load_classifier, save_classifier,
    train_classifier, Classifier,
};
use crate::par::Parallelism;

/// Everything a finished pipeline produced, in memory.
pub struct PipelineArtifacts {
    pub models: BTreeMap<String, Classifier>,
    pub purifier: PurifierState,
    pub adv_model: Option<Classifier>,
    pub report: EvalReport,
}

fn stage_err(stage: &str, e: Error) -> Error {
    Error::Integrity(format!("stage {stage} failed: {e}"))
}

fn log(progress: bool, msg: &str) {
    if progress {
        eprintln!("[apegan] {msg}");
    }
}

fn load_dataset(config: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    match config.dataset.as_str() {
        "mnist" => crate::data::load_mnist(&config.data_dir),
        "cifar10" => crate::data::load_cifar10(&config.data_dir),
        other => Err(Error::config(format!("unknown dataset {other}"))),
    }
}

fn train_target(
    config: &ExperimentConfig,
    name: &str,
    train: &LabeledDataset,
    test: &LabeledDataset,
    resume: bool,
    mode: Parallelism,
    progress: bool,
) -> Result<(Classifier, PathBuf)> {
    let train_cfg = config.train_config_for(name);
    let hash = config_hash(&(&config.dataset, name, &train_cfg));
    let dir = config.out_dir.join(format!("models/{name}-{hash}"));
    if resume && dir.join("meta.json").exists() {
        if let Ok(clf) = load_classifier(&dir) {
            log(progress, &format!("model {name}: reusing {}", dir.display()));
            return Ok((clf, dir));
        }
    }
    let t = Instant::now();
    let clf = train_classifier(&builtin_spec(name)?, train, test, &train_cfg, mode)?;
    save_classifier(&clf, &dir)?;
    log(
        progress,
        &format!(
            "model {name}: trained {} epochs in {:.0}s, clean error {:.2}%",
            train_cfg.epochs,
            t.elapsed().as_secs_f64(),
            clf.meta.clean_error.unwrap_or(f64::NAN)
        ),
    );
    Ok((clf, dir))
}

#[allow(clippy::too_many_arguments)]
fn attack_set(
    config: &ExperimentConfig,
    kind: AttackKind,
    attack_cfg: &AttackConfig,
    model: &Classifier,
    model_tag: &str,
    dataset: &LabeledDataset,
    tag: &str,
    count: usize,
    resume: bool,
    mode: Parallelism,
    progress: bool,
) -> Result<(AdversarialSet, PathBuf)> {
    let hash = config_hash(&(
        &config.dataset,
        kind.name(),
        attack_cfg,
        model.digest(),
        tag,
        count,
        config.seed,
    ));
    let dir = config
        .out_dir
        .join(format!("sets/{tag}-{}-{model_tag}-{hash}", kind.name()));
    if resume && dir.join("manifest.json").exists() {
        if let Ok(set) = AdversarialSet::load(&dir) {
            log(progress, &format!("{}: reusing {}", kind.name(), dir.display()));
            return Ok((set, dir));
        }
    }
    let t = Instant::now();
    let (set, result) = generate_set(
        kind,
        model,
        dataset,
        &config.dataset,
        attack_cfg,
        count,
        config.seed,
        mode,
    )?;
    set.save(&dir)?;
    log(
        progress,
        &format!(
            "{} on {model_tag} ({tag}, n={count}): {:.0}s, success {}/{}",
            kind.name(),
            t.elapsed().as_secs_f64(),
            result.success_count(),
            result.success.len()
        ),
    );
    Ok((set, dir))
}

/// Raw vs purified error of a persisted adversarial set against a model.
/// A digest mismatch between the manifest and the evaluating model is
/// reported as a warning, not an error (cross-model evaluation is
/// legitimate).
pub fn evaluate_defense(
    model: &Classifier,
    purifier: &PurifierState,
    set: &AdversarialSet,
    mode: Parallelism,
) -> Result<(f64, f64, Option<String>)> {
    if set.labels.is_empty() {
        return Err(Error::config("adversarial set is empty"));
    }
    let warning = (set.manifest.model_digest != model.digest()).then(|| {
        format!(
            "set crafted on {} ({}), evaluated on {} ({})",
            set.manifest.source_model,
            set.manifest.model_digest,
            model.spec.name,
            model.digest()
        )
    });
    let raw = error_rate(model, &set.images, &set.labels, None, mode)?;
    let purified = error_rate(model, &set.images, &set.labels, Some(purifier), mode)?;
    Ok((raw, purified, warning))
}

/// Runs the full pipeline: train targets, craft adversarial sets, train the
/// purifier, evaluate every condition raw and purified, reproduce the
/// combination-defense tables, and render the report. Stages persist their
/// outputs under `config.out_dir` and are skipped on resume when already
/// present.
pub fn run_experiment(
    config: &ExperimentConfig,
    resume: bool,
    mode: Parallelism,
    progress: bool,
) -> Result<PipelineArtifacts> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;
    let mut durations: BTreeMap<String, f64> = BTreeMap::new();

    // ---- data ----
    let t = Instant::now();
    let (mut train, mut test) = load_dataset(config).map_err(|e| stage_err("data", e))?;
    if let Some(n) = config.train_subset {
        train = train.select(&crate::attacks::select_indices(
            train.len(),
            n,
            config.seed,
        ));
    }
    if let Some(n) = config.test_subset {
        test = test.select(&crate::attacks::select_indices(
            test.len(),
            n,
            config.seed.wrapping_add(1),
        ));
    }
    durations.insert("data".into(), t.elapsed().as_secs_f64());
    log(
        progress,
        &format!("data: {} train / {} test", train.len(), test.len()),
    );

    // ---- target models ----
    let t = Instant::now();
    let mut models: BTreeMap<String, Classifier> = BTreeMap::new();
    let mut model_names: Vec<String> = vec![
        config.roster.fgsm.clone(),
        config.roster.igs.clone(),
        config.roster.jsma.clone(),
        config.roster.lbfgs.clone(),
        config.roster.deepfool.clone(),
        config.roster.cw_l2.clone(),
    ];
    model_names.sort();
    model_names.dedup();
    for name in &model_names {
        let (clf, _) = train_target(config, name, &train, &test, resume, mode, progress)
            .map_err(|e| stage_err("train-targets", e))?;
        models.insert(name.clone(), clf);
    }
    durations.insert("train-targets".into(), t.elapsed().as_secs_f64());

    // ---- purifier training pairs (FGSM over the training split) ----
    let t = Instant::now();
    let pair_model = &models[&config.roster.fgsm];
    let pair_cfg = AttackConfig {
        eps: config.purifier.pair_eps,
        ..config.attack.clone()
    };
    let (pair_set, _) = attack_set(
        config,
        AttackKind::Fgsm,
        &pair_cfg,
        pair_model,
        &config.roster.fgsm,
        &train,
        "train",
        train.len(),
        resume,
        mode,
        progress,
    )
    .map_err(|e| stage_err("pairs", e))?;
    durations.insert("pairs".into(), t.elapsed().as_secs_f64());

    // ---- purifier ----
    let t = Instant::now();
    let purifier_hash = config_hash(&(
        &config.dataset,
        &config.purifier,
        pair_set.manifest.model_digest.clone(),
        config.seed,
    ));
    let purifier_dir = config.out_dir.join(format!("purifier-{purifier_hash}"));
    let purifier = if resume && purifier_dir.join("meta.json").exists() {
        match PurifierState::load(&purifier_dir) {
            Ok(p) => {
                log(progress, &format!("purifier: reusing {}", purifier_dir.display()));
                p
            }
            Err(_) => train_purifier(config, &pair_set, &train, &purifier_dir, mode, progress)
                .map_err(|e| stage_err("train-apegan", e))?,
        }
    } else {
        train_purifier(config, &pair_set, &train, &purifier_dir, mode, progress)
            .map_err(|e| stage_err("train-apegan", e))?
    };
    durations.insert("train-apegan".into(), t.elapsed().as_secs_f64());

    // ---- adversarial sets on the test split ----
    let t = Instant::now();
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut sets: Vec<(AttackKind, AdversarialSet, PathBuf, String)> = Vec::new();

    // FGSM eps sweep
    for &eps in &config.fgsm_eps_sweep {
        let cfg = AttackConfig {
            eps,
            ..config.attack.clone()
        };
        let model = &models[&config.roster.fgsm];
        let count = config.subsets.fgsm.unwrap_or(test.len()).min(test.len());
        let (set, dir) = attack_set(
            config,
            AttackKind::Fgsm,
            &cfg,
            model,
            &config.roster.fgsm,
            &test,
            &format!("test-eps{eps}"),
            count,
            resume,
            mode,
            progress,
        )
        .map_err(|e| stage_err("attacks", e))?;
        sets.push((AttackKind::Fgsm, set, dir, config.roster.fgsm.clone()));
    }
    // the expensive per-sample attacks
    for kind in [
        AttackKind::Lbfgs,
        AttackKind::Deepfool,
        AttackKind::Jsma,
        AttackKind::CwL2,
    ] {
        let model_name = config.roster.model_for(kind).to_string();
        let model = &models[&model_name];
        let count = config
            .subsets
            .for_kind(kind)
            .unwrap_or(test.len())
            .min(test.len());
        let (set, dir) = attack_set(
            config,
            kind,
            &config.attack,
            model,
            &model_name,
            &test,
            "test",
            count,
            resume,
            mode,
            progress,
        )
        .map_err(|e| stage_err("attacks", e))?;
        sets.push((kind, set, dir, model_name));
    }
    durations.insert("attacks".into(), t.elapsed().as_secs_f64());

    // ---- evaluation: benign + adversarial rows ----
    let t = Instant::now();
    let benign_model_name = config.roster.fgsm.clone();
    let benign_model = &models[&benign_model_name];

    let clean_raw = error_rate(benign_model, &test.images, &test.labels, None, mode)?;
    let clean_purified = error_rate(benign_model, &test.images, &test.labels, Some(&purifier), mode)?;
    rows.push(ReportRow {
        input: "clean".into(),
        params: serde_json::json!({}),
        source_model: benign_model_name.clone(),
        n: test.len(),
        target_error: clean_raw,
        purified_error: clean_purified,
        set_path: None,
        warning: None,
    });

    let noisy = add_gaussian_noise(
        &test.images,
        config.noise.mean,
        config.noise.variance,
        config.seed,
    )?;
    let noise_raw = error_rate(benign_model, &noisy, &test.labels, None, mode)?;
    let noise_purified = error_rate(benign_model, &noisy, &test.labels, Some(&purifier), mode)?;
    rows.push(ReportRow {
        input: "gaussian_noise".into(),
        params: serde_json::json!({"mean": config.noise.mean, "variance": config.noise.variance}),
        source_model: benign_model_name.clone(),
        n: test.len(),
        target_error: noise_raw,
        purified_error: noise_purified,
        set_path: None,
        warning: None,
    });

    for (kind, set, dir, model_name) in &sets {
        let model = &models[model_name];
        let (raw, purified, warning) = evaluate_defense(model, &purifier, set, mode)
            .map_err(|e| stage_err("evaluate", e))?;
        rows.push(ReportRow {
            input: kind.name().into(),
            params: set.manifest.params.clone(),
            source_model: model_name.clone(),
            n: set.labels.len(),
            target_error: raw,
            purified_error: purified,
            set_path: Some(dir.display().to_string()),
            warning,
        });
        log(
            progress,
            &format!(
                "eval {} ({}): raw {raw:.2}% -> purified {purified:.2}%",
                kind.name(),
                set.manifest.params
            ),
        );
    }
    durations.insert("evaluate".into(), t.elapsed().as_secs_f64());

    // ---- combination defense (adversarial training) ----
    let t = Instant::now();
    let mut combo_rows: Vec<ComboRow> = Vec::new();
    let mut adv_model = None;
    if config.combo.enabled {
        let name = config.roster.fgsm.clone();
        let hash = config_hash(&(
            &config.dataset,
            &name,
            &config.combo.train,
            &config.combo.adversarial,
        ));
        let dir = config.out_dir.join(format!("models/{name}-advtrain-{hash}"));
        let clf = if resume && dir.join("meta.json").exists() {
            match load_classifier(&dir) {
                Ok(c) => {
                    log(progress, &format!("adv-trained {name}: reusing {}", dir.display()));
                    c
                }
                Err(_) => train_adv(config, &name, &train, &test, &dir, mode, progress)
                    .map_err(|e| stage_err("adversarial-training", e))?,
            }
        } else {
            train_adv(config, &name, &train, &test, &dir, mode, progress)
                .map_err(|e| stage_err("adversarial-training", e))?
        };

        for &eps in &config.combo.fgsm_eps {
            let cfg = AttackConfig {
                eps,
                ..config.attack.clone()
            };
            let count = config.subsets.fgsm.unwrap_or(test.len()).min(test.len());
            let (set, set_dir) = attack_set(
                config,
                AttackKind::Fgsm,
                &cfg,
                &clf,
                &format!("{name}adv"),
                &test,
                &format!("test-eps{eps}"),
                count,
                resume,
                mode,
                progress,
            )
            .map_err(|e| stage_err("combination", e))?;
            let (raw, purified, _) = evaluate_defense(&clf, &purifier, &set, mode)
                .map_err(|e| stage_err("combination", e))?;
            combo_rows.push(ComboRow {
                attack: "fgsm".into(),
                params: serde_json::json!({"eps": eps}),
                n: set.labels.len(),
                adv_trained_error: raw,
                combined_error: purified,
                set_path: Some(set_dir.display().to_string()),
            });
            log(
                progress,
                &format!("combo fgsm eps={eps}: adv-trained {raw:.2}% -> combined {purified:.2}%"),
            );
        }
        for &alpha in &config.combo.igs_alphas {
            let cfg = AttackConfig {
                eps: alpha * config.attack.n_iter as f32,
                alpha,
                ..config.attack.clone()
            };
            let count = config.subsets.igs.unwrap_or(test.len()).min(test.len());
            let (set, set_dir) = attack_set(
                config,
                AttackKind::Igs,
                &cfg,
                &clf,
                &format!("{name}adv"),
                &test,
                &format!("test-alpha{alpha}"),
                count,
                resume,
                mode,
                progress,
            )
            .map_err(|e| stage_err("combination", e))?;
            let (raw, purified, _) = evaluate_defense(&clf, &purifier, &set, mode)
                .map_err(|e| stage_err("combination", e))?;
            combo_rows.push(ComboRow {
                attack: "igs".into(),
                params: serde_json::json!({"alpha": alpha, "n_iter": config.attack.n_iter}),
                n: set.labels.len(),
                adv_trained_error: raw,
                combined_error: purified,
                set_path: Some(set_dir.display().to_string()),
            });
            log(
                progress,
                &format!("combo igs alpha={alpha}: adv-trained {raw:.2}% -> combined {purified:.2}%"),
            );
        }
        adv_model = Some(clf);
    }
    durations.insert("combination".into(), t.elapsed().as_secs_f64());

    // ---- report ----
    let report = EvalReport {
        dataset: config.dataset.clone(),
        tool_version: crate::TOOL_VERSION.into(),
        created: chrono::Utc::now().to_rfc3339(),
        seed: config.seed,
        model_clean_errors: models
            .iter()
            .map(|(n, m)| (n.clone(), m.meta.clean_error.unwrap_or(f64::NAN)))
            .collect(),
        model_digests: models.iter().map(|(n, m)| (n.clone(), m.digest())).collect(),
        purifier_dir: Some(purifier_dir.display().to_string()),
        rows,
        combo: combo_rows,
        durations,
    };
    let grid_sets: Vec<(&AdversarialSet, String)> = sets
        .iter()
        .map(|(kind, set, _, _)| (set, kind.name().to_string()))
        .collect();
    crate::harness::render_report(&report, config, &test, &grid_sets, Some(&purifier), mode)
        .map_err(|e| stage_err("report", e))?;
    log(
        progress,
        &format!("report written under {}", config.out_dir.display()),
    );

    Ok(PipelineArtifacts {
        models,
        purifier,
        adv_model,
        report,
    })
}

fn train_purifier(
    config: &ExperimentConfig,
    pair_set: &AdversarialSet,
    train: &LabeledDataset,
    dir: &Path,
    mode: Parallelism,
    progress: bool,
) -> Result<PurifierState> {
    let t = Instant::now();
    // originals aligned with the crafted set
    let clean = match &pair_set.manifest.indices {
        Some(idx) => train
            .images
            .gather(&idx.iter().map(|&i| i as usize).collect::<Vec<_>>()),
        None => train.images.clone(),
    };
    let pairs = TrainingPairs::new(pair_set.images.clone(), clean)?;
    let (g_name, d_name) = config.purifier_specs();
    let mut state = train_apegan(
        &pairs,
        &builtin_spec(g_name)?,
        &builtin_spec(d_name)?,
        &config.purifier.train,
        mode,
    )?;
    state.meta.source_attack = pair_set.manifest.attack.clone();
    state.meta.eps = config.purifier.pair_eps;
    state.meta.dataset = config.dataset.clone();
    state.save(dir)?;
    log(
        progress,
        &format!(
            "purifier: trained {} epochs on {} pairs in {:.0}s (losses {:?})",
            config.purifier.train.epochs,
            pairs.len(),
            t.elapsed().as_secs_f64(),
            state.meta.epoch_losses
        ),
    );
    Ok(state)
}

fn train_adv(
    config: &ExperimentConfig,
    name: &str,
    train: &LabeledDataset,
    test: &LabeledDataset,
    dir: &Path,
    mode: Parallelism,
    progress: bool,
) -> Result<Classifier> {
    let t = Instant::now();
    let clf = adversarial_training(
        &builtin_spec(name)?,
        train,
        test,
        &config.combo.train,
        config.combo.adversarial,
        mode,
    )?;
    save_classifier(&clf, dir)?;
    log(
        progress,
        &format!(
            "adv-trained {name}: {:.0}s, clean error {:.2}%",
            t.elapsed().as_secs_f64(),
            clf.meta.clean_error.unwrap_or(f64::NAN)
        ),
    );
    Ok(clf)
}
