//! Acceptance suite: reproduces the headline error-rate results at desk
//! scale and prints one PASS/FAIL line per criterion.
//!
//! Run with:
//!
//! ```sh
//! cargo test -p apegan --test acceptance -- --nocapture
//! ```
//!
//! The dataset-dependent criteria expect the MNIST IDX files under
//! `APEGAN_DATA_DIR` (default: `<workspace>/data/mnist`) and cache stage
//! outputs under `APEGAN_OUT_DIR` (default: `<workspace>/runs/acceptance`),
//! so reruns resume. Criterion 7 (the property suite) needs no data and no
//! training.

use std::path::PathBuf;

use apegan::attacks::{
    clip_neighborhood, deepfool, fgsm, iterative_gradient_sign, jsma, AttackConfig,
};
use apegan::data::{load_tensor_archive, save_tensor_archive};
use apegan::gan::{adversarial_loss, generator_loss, mse_loss, PurifierState};
use apegan::harness::{run_experiment, EvalReport, ExperimentConfig};
use apegan::models::{builtin_spec, Classifier, ModelSpec};
use apegan::nn::{input_fd_check, param_fd_check, LayerSpec, Network};
use apegan::par::Parallelism;
use apegan::rng::seeded;
use apegan::Tensor;
use rand::Rng;

const PAR: Parallelism = Parallelism::Parallel;

fn workspace_path(rel: &str) -> PathBuf {
    // tests run with CWD = crate root (crates/apegan)
    let here = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    here.ancestors()
        .nth(2)
        .map(|ws| ws.join(rel))
        .unwrap_or_else(|| PathBuf::from(rel))
}

fn mnist_dir() -> Option<PathBuf> {
    let candidates = [
        std::env::var("APEGAN_DATA_DIR").ok().map(PathBuf::from),
        Some(workspace_path("data/mnist")),
        Some(PathBuf::from("data/mnist")),
    ];
    candidates
        .into_iter()
        .flatten()
        .find(|p| p.join("train-images-idx3-ubyte").exists())
}

fn out_dir() -> PathBuf {
    std::env::var("APEGAN_OUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|_| workspace_path("runs/acceptance"))
}

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn new() -> Self {
        Gate { failures: vec![] }
    }

    fn check(&mut self, criterion: &str, ok: bool, detail: String) {
        if ok {
            println!("acceptance {criterion}: PASS — {detail}");
        } else {
            println!("acceptance {criterion}: FAIL — {detail}");
            self.failures.push(format!("{criterion}: {detail}"));
        }
    }

    fn finish(self) {
        assert!(
            self.failures.is_empty(),
            "acceptance criteria failed:\n{}",
            self.failures.join("\n")
        );
    }
}

// ---------------------------------------------------------------------------
// Criterion 7: property suite (no training, no dataset)
// ---------------------------------------------------------------------------

fn toy_conv_model(seed: u64) -> Classifier {
    let spec = ModelSpec {
        name: "toy".into(),
        input: (8, 8, 1),
        layers: vec![
            LayerSpec::ConvS2 { out_ch: 4, kh: 3, kw: 3 },
            LayerSpec::Relu,
            LayerSpec::Dense { width: 10 },
            LayerSpec::Softmax,
        ],
    };
    let mut clf = Classifier::init(spec, seed).unwrap();
    for p in clf.net.trainable_params_mut() {
        if p.rank() == 2 {
            for v in p.data_mut() {
                *v *= 20.0;
            }
        }
    }
    clf
}

fn random_images(n: usize, seed: u64) -> Tensor {
    let mut rng = seeded(seed);
    let data: Vec<f32> = (0..n * 64).map(|_| rng.random_range(0.2f32..0.8)).collect();
    Tensor::from_vec(vec![n, 8, 8, 1], data).unwrap()
}

#[test]
fn criterion_7_property_suite() {
    let mut gate = Gate::new();

    // eps-ball exactness for FGSM / iterative gradient sign
    {
        let clf = toy_conv_model(3);
        let x = random_images(16, 5);
        let labels: Vec<usize> = (0..16).map(|i| i % 10).collect();
        let eps = 0.3f32;
        let mut ok = true;
        for r in [
            fgsm(&clf.net, &x, &labels, eps, PAR).unwrap(),
            iterative_gradient_sign(&clf.net, &x, &labels, eps, 0.1, 4, PAR).unwrap(),
        ] {
            for (&a, &o) in r.images.data().iter().zip(x.data()) {
                ok &= (a - o).abs() <= eps + 1e-6 && (0.0..=1.0).contains(&a);
            }
        }
        gate.check("criterion 7 (eps ball)", ok, format!("|adv - x|_inf <= {eps} + 1e-6, range [0,1]"));
    }

    // JSMA pixel-budget bound
    {
        let clf = toy_conv_model(17);
        let x = random_images(8, 18);
        let preds = apegan::models::predictions(&clf.net, &x, PAR).unwrap();
        let targets: Vec<usize> = preds.iter().map(|&p| (p + 3) % 10).collect();
        let gamma = 0.1f32;
        let budget = (gamma * 64.0).floor() as usize;
        let r = jsma(&clf.net, &x, &preds, &targets, 1.0, gamma, PAR).unwrap();
        let worst = r.norms.iter().map(|n| n.0).max().unwrap();
        gate.check(
            "criterion 7 (jsma budget)",
            worst <= budget,
            format!("max modified pixels {worst} <= floor(gamma*d) = {budget}"),
        );
    }

    // clip_neighborhood algebraic cases
    {
        let x = Tensor::from_vec(vec![1, 1, 1, 3], vec![0.5, 0.5, 0.5]).unwrap();
        let a = Tensor::from_vec(vec![1, 1, 1, 3], vec![0.9, 0.5, -1.0]).unwrap();
        let c = clip_neighborhood(&a, &x, 0.3).unwrap();
        let identity = clip_neighborhood(&x, &x, 0.3).unwrap();
        let degenerate = clip_neighborhood(&a, &x, 0.0).unwrap();
        let ok = (c.data()[0] - 0.8).abs() < 1e-7
            && c.data()[1] == 0.5
            && (c.data()[2] - 0.2).abs() < 1e-7
            && identity.data() == x.data()
            && degenerate.data() == x.data();
        gate.check(
            "criterion 7 (clip algebra)",
            ok,
            "A=X fixed point, eps=0 collapse, 0.5/0.9/0.3 -> 0.8".into(),
        );
    }

    // tensor archive: bit-exact round trips over 100 random tensors
    {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = seeded(11);
        let mut ok = true;
        for i in 0..100 {
            let rank = rng.random_range(1..=4usize);
            let shape: Vec<usize> = (0..rank).map(|_| rng.random_range(1..=6usize)).collect();
            let numel = shape.iter().product();
            let data: Vec<f32> = (0..numel)
                .map(|_| f32::from_bits(rng.random::<u32>()))
                .map(|v| if v.is_finite() { v } else { 1.0 })
                .collect();
            let t = Tensor::from_vec(shape, data).unwrap();
            let path = dir.path().join(format!("t{i}.apet"));
            save_tensor_archive(&t, &path).unwrap();
            let back = load_tensor_archive(&path).unwrap();
            ok &= t.shape() == back.shape()
                && t.data()
                    .iter()
                    .zip(back.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
        }
        gate.check("criterion 7 (archive round trip)", ok, "100/100 bit-exact".into());
    }

    // finite-difference agreement on every layer kind
    {
        let kinds: Vec<(&str, Vec<LayerSpec>, (usize, usize, usize), bool)> = vec![
            ("conv_s1", vec![LayerSpec::ConvS1 { out_ch: 6, kh: 3, kw: 3 }], (7, 7, 2), false),
            ("conv_s2", vec![LayerSpec::ConvS2 { out_ch: 5, kh: 3, kw: 3 }], (9, 9, 2), false),
            ("deconv_s2", vec![LayerSpec::DeconvS2 { out_ch: 5, kh: 3, kw: 3 }], (4, 4, 3), false),
            ("maxpool2", vec![LayerSpec::Maxpool2], (6, 6, 3), false),
            ("dense", vec![LayerSpec::Dense { width: 9 }], (4, 4, 2), false),
            ("dropout", vec![LayerSpec::Dropout { rate: 0.4 }], (5, 5, 2), true),
            ("batchnorm", vec![LayerSpec::Batchnorm], (5, 5, 4), true),
            ("relu", vec![LayerSpec::Relu], (5, 5, 2), false),
            ("lrelu", vec![LayerSpec::Lrelu { slope: 0.2 }], (5, 5, 2), false),
            ("sigmoid", vec![LayerSpec::Sigmoid, LayerSpec::Relu], (5, 5, 2), false),
            (
                "softmax",
                vec![LayerSpec::Dense { width: 7 }, LayerSpec::Softmax, LayerSpec::Relu],
                (3, 3, 1),
                false,
            ),
        ];
        let mut worst: f64 = 0.0;
        let mut worst_kind = "";
        for (name, specs, shape, training) in kinds {
            let mut net = Network::build(&specs, shape).unwrap();
            net.init_params(42);
            for p in net.trainable_params_mut() {
                if p.rank() == 2 {
                    for v in p.data_mut() {
                        *v *= 10.0;
                    }
                }
            }
            let mut rng = seeded(7);
            let n = shape.0 * shape.1 * shape.2 * 3;
            let data: Vec<f32> = (0..n)
                .map(|_| {
                    let v: f32 = rng.random_range(-1.0f32..1.0);
                    v + 0.07 * v.signum()
                })
                .collect();
            let x = Tensor::from_vec(vec![3, shape.0, shape.1, shape.2], data).unwrap();
            let e1 = input_fd_check(&mut net, &x, training, 1e-2, 40, 11, PAR).unwrap();
            let e2 = if net.trainable_params().is_empty() {
                0.0
            } else {
                param_fd_check(&mut net, &x, training, 1e-2, 24, 13, PAR).unwrap()
            };
            let e = e1.max(e2);
            if e > worst {
                worst = e;
                worst_kind = name;
            }
        }
        gate.check(
            "criterion 7 (gradient checks)",
            worst <= 1e-2,
            format!("worst relative error {worst:.2e} ({worst_kind}) <= 1e-2"),
        );
    }

    // loss identities
    {
        let g_spec = builtin_spec("G_mnist").unwrap();
        let d_spec = builtin_spec("D_mnist").unwrap();
        let state = PurifierState::init(g_spec, d_spec, 13).unwrap();
        let mut rng = seeded(19);
        let clean_data: Vec<f32> = (0..4 * 784).map(|_| rng.random_range(0.0f32..1.0)).collect();
        let clean = Tensor::from_vec(vec![4, 28, 28, 1], clean_data).unwrap();
        let adv = clean.map(|v| (v + 0.1).min(1.0));
        let b = generator_loss(&clean, &adv, &state.generator, &state.discriminator, 0.7, 0.3, PAR)
            .unwrap();
        let recompose_ok = b.total == f64::from(0.7f32) * b.l_mse + f64::from(0.3f32) * b.l_adv;

        let probs = [0.31f32, 0.99, 0.5, 0.07];
        let n = probs.len() as f64;
        let sum_log: f64 = probs.iter().map(|&p| f64::from(p).ln()).sum();
        let identity_ok = (adversarial_loss(&probs) - n - (-sum_log)).abs() <= 1e-6;

        // generator-gradient equivalence of sum(1 - log D) and -sum(log D)
        let grads_for = |use_one_minus: bool| -> Vec<Tensor> {
            let g_cache = state.generator.forward_cached(&adv, PAR).unwrap();
            let g_img = g_cache.output().map(|z| 1.0 / (1.0 + (-z).exp()));
            let d_cache = state.discriminator.forward_cached(&g_img, PAR).unwrap();
            let p: Vec<f32> = d_cache
                .output()
                .data()
                .iter()
                .map(|&z| 1.0 / (1.0 + (-z).exp()))
                .collect();
            let seed = Tensor::from_vec(
                d_cache.output().shape().to_vec(),
                p.iter()
                    .map(|&pv| {
                        let dl_dp = if use_one_minus {
                            -1.0 / pv.max(1e-12)
                        } else {
                            -(pv.max(1e-12)).recip()
                        };
                        dl_dp * pv * (1.0 - pv)
                    })
                    .collect(),
            )
            .unwrap();
            let (mut dg, _) = state.discriminator.backward(&d_cache, &seed, false, PAR);
            for (v, &y) in dg.data_mut().iter_mut().zip(g_img.data()) {
                *v *= y * (1.0 - y);
            }
            state.generator.backward(&g_cache, &dg, true, PAR).1.unwrap()
        };
        let ga = grads_for(true);
        let gb = grads_for(false);
        let grad_ok = ga
            .iter()
            .zip(&gb)
            .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 1e-6));

        // mse oracle
        let mse_ok = {
            let a = Tensor::from_vec(vec![1, 2, 2, 1], vec![0.1, 0.9, 0.4, 0.7]).unwrap();
            let b = Tensor::from_vec(vec![1, 2, 2, 1], vec![0.3, 0.5, 0.4, 0.1]).unwrap();
            let brute = (0.04f64 + 0.16 + 0.0 + 0.36) / 4.0;
            (mse_loss(&a, &b).unwrap() - brute).abs() < 1e-9
        };

        gate.check(
            "criterion 7 (loss identities)",
            recompose_ok && identity_ok && grad_ok && mse_ok,
            format!("recomposition {recompose_ok}, l_adv - N = -sum log D {identity_ok}, grad equivalence {grad_ok}, mse oracle {mse_ok}"),
        );
    }

    // DeepFool one-step closed form on a linear model
    {
        let w = [1.5f32, -2.0];
        let b = -0.1f32;
        let spec = ModelSpec {
            name: "linear".into(),
            input: (1, 1, 2),
            layers: vec![LayerSpec::Dense { width: 2 }, LayerSpec::Softmax],
        };
        let mut clf = Classifier::init(spec, 0).unwrap();
        {
            let mut params = clf.net.trainable_params_mut();
            params[0].data_mut().copy_from_slice(&[0.0, w[0], 0.0, w[1]]);
            params[1].data_mut().copy_from_slice(&[0.0, b]);
        }
        let x = Tensor::from_vec(vec![1, 1, 1, 2], vec![0.7, 0.3]).unwrap();
        let margin = w[0] * 0.7 + w[1] * 0.3 + b;
        let overshoot = 0.02f32;
        let r = deepfool(&clf.net, &x, &[1], 50, overshoot, PAR).unwrap();
        let expected = f64::from(1.0 + overshoot) * f64::from(margin.abs())
            / f64::from(w[0] * w[0] + w[1] * w[1]).sqrt();
        let rel = (r.norms[0].1 - expected).abs() / expected;
        gate.check(
            "criterion 7 (deepfool closed form)",
            r.success[0] && rel < 0.10,
            format!("one-step l2 within {:.1}% of |w.x+b|/||w||", rel * 100.0),
        );
    }

    gate.finish();
}

// ---------------------------------------------------------------------------
// Criteria 1-6 (MNIST desk-scale pipeline) and 8 (extended, optional)
// ---------------------------------------------------------------------------

fn purified(report: &EvalReport, input: &str) -> f64 {
    report.row(input).map(|r| r.purified_error).unwrap_or(f64::NAN)
}

fn raw(report: &EvalReport, input: &str) -> f64 {
    report.row(input).map(|r| r.target_error).unwrap_or(f64::NAN)
}

#[test]
fn criteria_1_to_6_mnist_pipeline() {
    let Some(data_dir) = mnist_dir() else {
        for c in 1..=6 {
            println!("acceptance criterion {c}: SKIP — MNIST not found (set APEGAN_DATA_DIR)");
        }
        return;
    };
    let cfg = ExperimentConfig::mnist_desk(data_dir, out_dir());
    let artifacts =
        run_experiment(&cfg, true, PAR, true).expect("desk-scale pipeline must complete");
    let report = &artifacts.report;
    let mut gate = Gate::new();

    // 1. clean baselines
    let c_err = report.model_clean_errors["C"];
    let a_err = report.model_clean_errors["A"];
    gate.check(
        "criterion 1 (clean baseline)",
        c_err <= 1.5 && a_err <= 1.6,
        format!("model C {c_err:.2}% <= 1.5%, model A {a_err:.2}% <= 1.6%"),
    );

    // 2. attack potency
    let fgsm_raw = report.fgsm_row(0.3).map(|r| r.target_error).unwrap_or(f64::NAN);
    let cw_raw = raw(report, "cw_l2");
    let cw_n = report.row("cw_l2").map(|r| r.n).unwrap_or(0);
    let df_raw = raw(report, "deepfool");
    gate.check(
        "criterion 2 (attack potency)",
        fgsm_raw >= 85.0 && cw_raw >= 99.0 && cw_n == 1000 && df_raw >= 90.0,
        format!("fgsm eps=0.3 {fgsm_raw:.1}% >= 85, cw {cw_raw:.1}% >= 99 (n={cw_n}), deepfool {df_raw:.1}% >= 90"),
    );

    // 3. defense efficacy
    let fgsm_pur = report.fgsm_row(0.3).map(|r| r.purified_error).unwrap_or(f64::NAN);
    let cw_pur = purified(report, "cw_l2");
    let df_pur = purified(report, "deepfool");
    let lb_pur = purified(report, "lbfgs");
    let js_pur = purified(report, "jsma");
    gate.check(
        "criterion 3 (defense efficacy)",
        fgsm_pur <= 10.0 && cw_pur <= 10.0 && df_pur <= 10.0 && lb_pur <= 10.0 && js_pur <= 55.0,
        format!(
            "purified: fgsm {fgsm_pur:.1}%<=10, cw {cw_pur:.1}%<=10, deepfool {df_pur:.1}%<=10, lbfgs {lb_pur:.1}%<=10, jsma {js_pur:.1}%<=55"
        ),
    );

    // 4. eps-sweep ordering
    let sweep: Vec<f64> = [0.1f32, 0.2, 0.3, 0.4]
        .iter()
        .map(|&e| report.fgsm_row(e).map(|r| r.purified_error).unwrap_or(f64::NAN))
        .collect();
    let monotone = sweep.windows(2).all(|w| w[0] <= w[1]);
    gate.check(
        "criterion 4 (eps sweep)",
        monotone && sweep[0] <= 5.0 && sweep[3] <= 35.0,
        format!(
            "purified sweep {:.2?} non-decreasing, eps=0.1 {:.1}%<=5, eps=0.4 {:.1}%<=35",
            sweep, sweep[0], sweep[3]
        ),
    );

    // 5. benign inputs
    let clean_pur = purified(report, "clean");
    let noise_raw = raw(report, "gaussian_noise");
    let noise_pur = purified(report, "gaussian_noise");
    gate.check(
        "criterion 5 (benign inputs)",
        clean_pur <= 3.0 && noise_pur <= 3.0 && (1.0..=4.0).contains(&noise_raw),
        format!(
            "purified clean {clean_pur:.2}%<=3, purified noise {noise_pur:.2}%<=3, raw noise {noise_raw:.2}% in [1,4]"
        ),
    );

    // 6. combination defense
    let igs = report
        .combo
        .iter()
        .find(|r| {
            r.attack == "igs"
                && r.params
                    .get("alpha")
                    .and_then(|v| v.as_f64())
                    .map(|a| (a - 0.3).abs() < 1e-6)
                    .unwrap_or(false)
        })
        .expect("igs alpha=0.3 combo row");
    let gap = igs.adv_trained_error - igs.combined_error;
    gate.check(
        "criterion 6 (combination defense)",
        gap >= 40.0,
        format!(
            "igs N=2 alpha=0.3: adversarial training {:.1}% -> combined {:.1}% (gap {gap:.1} >= 40 points)",
            igs.adv_trained_error, igs.combined_error
        ),
    );

    // sanity orderings present in every table
    let mut ordering_ok = true;
    let clean_raw_err = raw(report, "clean");
    for row in &report.rows {
        if row.input == "clean" || row.input == "gaussian_noise" {
            continue;
        }
        ordering_ok &= row.target_error > clean_raw_err;
        ordering_ok &= row.purified_error < row.target_error;
    }
    gate.check(
        "invariants (table orderings)",
        ordering_ok,
        "raw adversarial > clean error and purified < raw on every attack row".into(),
    );

    gate.finish();
}

#[test]
fn criterion_8_cifar10_extended() {
    // Extended and optional: requires the CIFAR10 binary batches plus a
    // paper-faithful training budget (tens of CPU hours); report the
    // situation honestly instead of silently passing.
    let dir = std::env::var("APEGAN_CIFAR_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|_| workspace_path("data/cifar10"));
    if !dir.join("test_batch.bin").exists() {
        println!("acceptance criterion 8: SKIP — extended/optional; CIFAR10 data not present");
        return;
    }
    let mut cfg = ExperimentConfig::mnist_desk(dir, out_dir().join("cifar"));
    cfg.dataset = "cifar10".into();
    cfg.roster = apegan::harness::Roster::cifar_default();
    cfg.purifier.pair_eps = 0.1;
    cfg.purifier.train.epochs = 10;
    cfg.train_default.epochs = 30;
    cfg.train_overrides.clear();
    cfg.combo.enabled = false;
    let artifacts = run_experiment(&cfg, true, PAR, true).expect("cifar pipeline");
    let row = artifacts.report.fgsm_row(0.1).expect("fgsm eps=0.1 row");
    let improvement = row.target_error - row.purified_error;
    let ok = row.target_error >= 60.0 && improvement >= 25.0;
    println!(
        "acceptance criterion 8: {} — fgsm eps=0.1 raw {:.1}% (>=60), improvement {:.1} points (>=25)",
        if ok { "PASS" } else { "FAIL" },
        row.target_error,
        improvement
    );
    assert!(ok);
}
