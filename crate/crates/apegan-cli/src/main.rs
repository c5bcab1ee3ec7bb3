//! `apegan` — craft adversarial examples, train the purifier, evaluate
//! defenses and reproduce the error-rate tables.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use apegan::attacks::{generate_set, AttackConfig, AttackKind};
use apegan::data::{load_tensor_archive, save_tensor_archive, AdversarialSet};
use apegan::gan::PurifierState;
use apegan::harness::{evaluate_defense, run_experiment, ExperimentConfig};
use apegan::models::{builtin_spec, error_rate, load_classifier, save_classifier};
use apegan::par::Parallelism;
use apegan::Error;

#[derive(Parser)]
#[command(name = "apegan", version, about = "Adversarial examples and the APE-GAN defense")]
struct Cli {
    /// Run the numeric kernels sequentially instead of on the thread pool.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset name: mnist or cifar10.
    #[arg(long, default_value = "mnist")]
    dataset: String,
    /// Directory holding the dataset files.
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a built-in target model and save the checkpoint.
    TrainTarget {
        #[command(flatten)]
        data: DataArgs,
        /// Built-in architecture name (A, B, C, D).
        #[arg(long)]
        model: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Craft an adversarial set against a trained model.
    Attack {
        #[command(flatten)]
        data: DataArgs,
        /// Attack name: fgsm, igs, lbfgs, deepfool, jsma, cw_l2.
        #[arg(long)]
        attack: String,
        /// Trained model checkpoint directory.
        #[arg(long)]
        model: PathBuf,
        /// Output directory for the adversarial set.
        #[arg(long)]
        out: PathBuf,
        /// Dataset split to perturb.
        #[arg(long, default_value = "test")]
        split: String,
        /// Attack configuration JSON (AttackConfig); flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        eps: Option<f32>,
        /// Sample count (defaults to the full split).
        #[arg(long)]
        subset: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the purifier from a persisted adversarial set over the
    /// training split.
    TrainApegan {
        #[command(flatten)]
        data: DataArgs,
        /// Adversarial set crafted from the training split.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 2e-4)]
        learning_rate: f32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run images through the purifier generator.
    Purify {
        /// Purifier checkpoint directory.
        #[arg(long)]
        purifier: PathBuf,
        /// Input: a tensor archive or an adversarial-set directory.
        #[arg(long)]
        input: PathBuf,
        /// Output tensor archive.
        #[arg(long)]
        out: PathBuf,
    },
    /// Error rate of a model on a persisted set, optionally purified first.
    Evaluate {
        /// Trained model checkpoint directory.
        #[arg(long)]
        model: PathBuf,
        /// Adversarial-set directory.
        #[arg(long)]
        set: PathBuf,
        /// Purifier checkpoint; when given, also reports the purified error.
        #[arg(long)]
        purifier: Option<PathBuf>,
    },
    /// Re-render report.md from a finished run's report.json.
    Report {
        /// Run output directory containing report.json.
        #[arg(long)]
        run: PathBuf,
    },
    /// Full pipeline: train targets, craft sets, train the purifier,
    /// evaluate everything and render the report.
    Run {
        /// ExperimentConfig JSON file; omitted fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Reuse finished stage outputs found under the output directory.
        #[arg(long)]
        resume: bool,
        /// Overrides config.out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides config.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::UnknownName { .. } | Error::Shape { .. } => 2,
        Error::Train { .. } | Error::NonFinite(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mode = if cli.sequential {
        Parallelism::Sequential
    } else {
        Parallelism::Parallel
    };
    match dispatch(cli.command, mode) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn load_split(data: &DataArgs, split: &str) -> Result<apegan::data::LabeledDataset, Error> {
    let (train, test) = match data.dataset.as_str() {
        "mnist" => apegan::data::load_mnist(&data.data_dir)?,
        "cifar10" => apegan::data::load_cifar10(&data.data_dir)?,
        other => return Err(Error::config(format!("unknown dataset {other}"))),
    };
    match split {
        "train" => Ok(train),
        "test" => Ok(test),
        other => Err(Error::config(format!("unknown split {other}"))),
    }
}

fn dispatch(cmd: Command, mode: Parallelism) -> Result<(), Error> {
    match cmd {
        Command::TrainTarget {
            data,
            model,
            out,
            epochs,
            batch_size,
            learning_rate,
            seed,
        } => {
            let spec = builtin_spec(&model)?;
            let train = load_split(&data, "train")?;
            let test = load_split(&data, "test")?;
            let cfg = apegan::models::TrainConfig {
                epochs,
                batch_size,
                learning_rate,
                seed,
            };
            let clf = apegan::models::train_classifier(&spec, &train, &test, &cfg, mode)?;
            save_classifier(&clf, &out)?;
            println!(
                "{}",
                serde_json::json!({
                    "model": model,
                    "clean_error": clf.meta.clean_error,
                    "digest": clf.digest(),
                    "checkpoint": out,
                })
            );
            Ok(())
        }
        Command::Attack {
            data,
            attack,
            model,
            out,
            split,
            config,
            eps,
            subset,
            seed,
        } => {
            let kind = AttackKind::parse(&attack)?;
            let clf = load_classifier(&model)?;
            let dataset = load_split(&data, &split)?;
            let mut cfg: AttackConfig = match config {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)
                    .map_err(|e| Error::config(format!("invalid attack config: {e}")))?,
                None => AttackConfig::default(),
            };
            if let Some(eps) = eps {
                cfg.eps = eps;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let count = subset.unwrap_or(dataset.len());
            let (set, result) = generate_set(
                kind,
                &clf,
                &dataset,
                &data.dataset,
                &cfg,
                count,
                cfg.seed,
                mode,
            )?;
            set.save(&out)?;
            println!(
                "{}",
                serde_json::json!({
                    "attack": kind.name(),
                    "count": set.manifest.count,
                    "success": result.success_count(),
                    "set": out,
                })
            );
            Ok(())
        }
        Command::TrainApegan {
            data,
            pairs,
            out,
            epochs,
            batch_size,
            learning_rate,
            seed,
        } => {
            let set = AdversarialSet::load(&pairs)?;
            if set.manifest.split != apegan::data::Split::Train {
                return Err(Error::config(
                    "purifier training expects a set crafted from the train split",
                ));
            }
            let train = load_split(&data, "train")?;
            let clean = match &set.manifest.indices {
                Some(idx) => train
                    .images
                    .gather(&idx.iter().map(|&i| i as usize).collect::<Vec<_>>()),
                None => train.images.clone(),
            };
            let pairs = apegan::gan::TrainingPairs::new(set.images.clone(), clean)?;
            let (g_name, d_name) = if data.dataset == "mnist" {
                ("G_mnist", "D_mnist")
            } else {
                ("G_cifar", "D_cifar")
            };
            let cfg = apegan::gan::ApeGanConfig {
                epochs,
                batch_size,
                learning_rate,
                seed,
                ..apegan::gan::ApeGanConfig::default()
            };
            let mut state =
                apegan::gan::train_apegan(&pairs, &builtin_spec(g_name)?, &builtin_spec(d_name)?, &cfg, mode)?;
            state.meta.source_attack = set.manifest.attack.clone();
            state.meta.dataset = data.dataset.clone();
            state.save(&out)?;
            println!(
                "{}",
                serde_json::json!({
                    "pairs": pairs.len(),
                    "epochs": epochs,
                    "losses": state.meta.epoch_losses,
                    "checkpoint": out,
                })
            );
            Ok(())
        }
        Command::Purify { purifier, input, out } => {
            let state = PurifierState::load(&purifier)?;
            let images = if input.is_dir() {
                AdversarialSet::load(&input)?.images
            } else {
                load_tensor_archive(&input)?
            };
            let purified = state.purify(&images, mode)?;
            save_tensor_archive(&purified, &out)?;
            println!(
                "{}",
                serde_json::json!({ "count": purified.shape()[0], "out": out })
            );
            Ok(())
        }
        Command::Evaluate { model, set, purifier } => {
            let clf = load_classifier(&model)?;
            let set = AdversarialSet::load(&set)?;
            let row = match purifier {
                Some(p) => {
                    let state = PurifierState::load(&p)?;
                    let (raw, purified, warning) = evaluate_defense(&clf, &state, &set, mode)?;
                    serde_json::json!({
                        "attack": set.manifest.attack,
                        "params": set.manifest.params,
                        "n": set.manifest.count,
                        "target_error": raw,
                        "purified_error": purified,
                        "digest_warning": warning,
                    })
                }
                None => {
                    let raw = error_rate(&clf, &set.images, &set.labels, None, mode)?;
                    serde_json::json!({
                        "attack": set.manifest.attack,
                        "params": set.manifest.params,
                        "n": set.manifest.count,
                        "target_error": raw,
                    })
                }
            };
            println!("{row}");
            Ok(())
        }
        Command::Report { run } => {
            let report: apegan::harness::EvalReport =
                serde_json::from_str(&std::fs::read_to_string(run.join("report.json"))?)?;
            let md = apegan::harness::markdown_report(&report);
            std::fs::write(run.join("report.md"), &md)?;
            print!("{md}");
            Ok(())
        }
        Command::Run {
            config,
            resume,
            out,
            seed,
        } => {
            let mut cfg: ExperimentConfig = match config {
                Some(path) => ExperimentConfig::from_json(&std::fs::read_to_string(path)?)?,
                None => ExperimentConfig::default(),
            };
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let artifacts = run_experiment(&cfg, resume, mode, true)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&artifacts.report)
                    .unwrap_or_else(|_| "{}".into())
            );
            Ok(())
        }
    }
}
