//! Purifier state and the perturbation-elimination inference path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::nn::{Head, Network};
use crate::par::Parallelism;
use crate::tensor::Tensor;

/// Provenance of a trained purifier.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PurifierMeta {
    /// Attack that produced the training pairs (normally `fgsm`).
    pub source_attack: String,
    pub eps: f32,
    pub dataset: String,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub xi1: f32,
    pub xi2: f32,
    pub created: String,
    /// Mean generator fusion loss per epoch.
    #[serde(default)]
    pub epoch_losses: Vec<f64>,
    /// Mean discriminator loss per epoch.
    #[serde(default)]
    pub epoch_d_losses: Vec<f64>,
}

/// Generator + discriminator parameters plus training configuration.
#[derive(Debug, Clone)]
pub struct PurifierState {
    pub generator_spec: ModelSpec,
    pub discriminator_spec: ModelSpec,
    pub generator: Network,
    pub discriminator: Network,
    pub meta: PurifierMeta,
}

impl PurifierState {
    /// Fresh purifier with seeded initialization.
    pub fn init(generator_spec: ModelSpec, discriminator_spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut generator = generator_spec.compile()?;
        let mut discriminator = discriminator_spec.compile()?;
        if generator.head() != Head::Sigmoid {
            return Err(Error::config("purifier generator must end in a sigmoid"));
        }
        if generator.output_shape() != generator.input_shape() {
            return Err(Error::config(format!(
                "generator must preserve its input shape, got {:?} -> {:?}",
                generator.input_shape(),
                generator.output_shape()
            )));
        }
        generator.init_params(seed);
        discriminator.init_params(seed.wrapping_add(1));
        Ok(PurifierState {
            generator_spec,
            discriminator_spec,
            generator,
            discriminator,
            meta: PurifierMeta {
                seed,
                ..PurifierMeta::default()
            },
        })
    }

    /// Eliminates perturbations: one generator forward pass in inference
    /// mode. Output shape equals the input shape and every value lies in
    /// `(0, 1)` (final sigmoid). Deterministic; evaluated in bounded slices.
    pub fn purify(&self, images: &Tensor, mode: Parallelism) -> Result<Tensor> {
        let n = images.batch();
        let mut out = Tensor::zeros(images.shape());
        let stride = images.stride0();
        let mut start = 0;
        while start < n {
            let end = (start + crate::models::eval_batch()).min(n);
            let slice = images.gather(&(start..end).collect::<Vec<_>>());
            let logits = self.generator.forward(&slice, mode)?;
            for (o, &z) in out.data_mut()[start * stride..end * stride]
                .iter_mut()
                .zip(logits.data())
            {
                *o = 1.0 / (1.0 + (-z).exp());
            }
            start = end;
        }
        Ok(out)
    }

    /// Discriminator probability (real vs reconstructed) per sample.
    pub fn discriminate(&self, images: &Tensor, mode: Parallelism) -> Result<Vec<f32>> {
        let logits = self.discriminator.forward(images, mode)?;
        Ok(logits.data().iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect())
    }

    /// Checkpoint layout: `generator/` + `discriminator/` network dirs and a
    /// `meta.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let g_dir = dir.join("generator");
        std::fs::create_dir_all(&g_dir)?;
        std::fs::write(
            g_dir.join("spec.json"),
            serde_json::to_string_pretty(&self.generator_spec)?,
        )?;
        crate::models::save_network_to(&self.generator, &g_dir)?;
        let d_dir = dir.join("discriminator");
        std::fs::create_dir_all(&d_dir)?;
        std::fs::write(
            d_dir.join("spec.json"),
            serde_json::to_string_pretty(&self.discriminator_spec)?,
        )?;
        crate::models::save_network_to(&self.discriminator, &d_dir)?;
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let g_dir = dir.join("generator");
        let generator_spec: ModelSpec =
            serde_json::from_str(&std::fs::read_to_string(g_dir.join("spec.json"))?)?;
        let mut generator = generator_spec.compile()?;
        crate::models::load_network_from(&mut generator, &g_dir)?;
        let d_dir = dir.join("discriminator");
        let discriminator_spec: ModelSpec =
            serde_json::from_str(&std::fs::read_to_string(d_dir.join("spec.json"))?)?;
        let mut discriminator = discriminator_spec.compile()?;
        crate::models::load_network_from(&mut discriminator, &d_dir)?;
        let meta: PurifierMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        Ok(PurifierState {
            generator_spec,
            discriminator_spec,
            generator,
            discriminator,
            meta,
        })
    }
}
