//! Scaled-down end-to-end pipeline run for sanity-checking quality and
//! runtime. `cargo run -p apegan --release --example pilot -- <data_dir>`.

use apegan::harness::{ExperimentConfig, Subsets};
use apegan::models::TrainConfig;
use apegan::par::Parallelism;

fn main() {
    let data_dir = std::env::args().nth(1).unwrap_or_else(|| "data/mnist".into());
    let cfg = ExperimentConfig {
        data_dir: data_dir.into(),
        out_dir: "runs/pilot".into(),
        train_subset: Some(12000),
        test_subset: Some(2000),
        train_default: TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        },
        subsets: Subsets {
            fgsm: None,
            igs: None,
            jsma: Some(200),
            lbfgs: Some(200),
            deepfool: Some(200),
            cw_l2: Some(200),
        },
        combo: apegan::harness::ComboConfig {
            enabled: true,
            train: TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
            igs_alphas: vec![0.3],
            fgsm_eps: vec![0.3],
            ..apegan::harness::ComboConfig::default()
        },
        attack: apegan::attacks::AttackConfig {
            cw_iters: 120,
            cw_search_steps: 3,
            cw_initial_c: 0.5,
            lambda_steps: 6,
            inner_iters: 20,
            ..apegan::attacks::AttackConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let t = std::time::Instant::now();
    match apegan::harness::run_experiment(&cfg, true, Parallelism::Parallel, true) {
        Ok(artifacts) => {
            println!("total: {:.0}s", t.elapsed().as_secs_f64());
            println!("{}", apegan::harness::markdown_report(&artifacts.report));
        }
        Err(e) => {
            eprintln!("pilot failed: {e}");
            std::process::exit(1);
        }
    }
}
