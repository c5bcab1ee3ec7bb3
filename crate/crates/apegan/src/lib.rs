//! Adversarial examples and the APE-GAN defense, end to end on CPU.
//!
//! The crate is organized around five layers:
//!
//! - [`nn`] — a small differentiable substrate: dense/convolutional layers,
//!   reverse-mode gradients with respect to parameters *and* inputs, and Adam.
//! - [`data`] — MNIST/CIFAR10 ingestion, Gaussian-noise perturbation and the
//!   lossless float32 tensor archive used to persist adversarial sets.
//! - [`models`] — the target classifier architectures (A–D), the purifier
//!   generator/discriminator pair, classifier training and evaluation.
//! - [`attacks`] — six white-box crafting procedures: FGSM, iterative
//!   gradient sign, box-constrained L-BFGS, DeepFool, JSMA and CW-L2.
//! - [`gan`] — the APE-GAN purifier: fusion loss, adversarial training loop
//!   and the purification inference path.
//!
//! [`harness`] ties the layers into resumable experiments that reproduce the
//! error-rate tables, and backs the `apegan` command-line tool.
//!
//! With the default `parallel` feature the batch-level kernels run on rayon;
//! without it everything executes sequentially. Results are independent of
//! the thread count: work is split into fixed-size chunks and reduced in
//! chunk order.

pub mod attacks;
pub mod data;
pub mod error;
pub mod gan;
pub mod harness;
pub mod models;
pub mod nn;
pub mod par;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Version stamp recorded in adversarial-set manifests and reports.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
