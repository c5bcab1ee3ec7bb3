//! Persisted adversarial sets: float32 images + labels + provenance manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Provenance metadata stored beside every adversarial image archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Attack registry name (`fgsm`, `igs`, `lbfgs`, `deepfool`, `jsma`, `cw_l2`).
    pub attack: String,
    /// Attack parameters, as a JSON object.
    pub params: serde_json::Value,
    /// Name of the model the attack was crafted against.
    pub source_model: String,
    /// Content digest of that model's spec + parameters.
    pub model_digest: String,
    pub dataset: String,
    pub split: Split,
    pub count: usize,
    /// RFC 3339 creation timestamp.
    pub created: String,
    pub tool_version: String,
    /// Source-dataset indices of the samples, when a strict subset was taken.
    /// `None` means `0..count` of the source split.
    #[serde(default)]
    pub indices: Option<Vec<u64>>,
    /// Samples (by set position) where the attack reported failure.
    #[serde(default)]
    pub failed_indices: Vec<u64>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if !crate::attacks::ATTACK_NAMES.contains(&self.attack.as_str()) {
            return Err(Error::UnknownName {
                name: self.attack.clone(),
                known: crate::attacks::ATTACK_NAMES.join(", "),
            });
        }
        if !self.params.is_object() {
            return Err(Error::Integrity("manifest params must be a JSON object".into()));
        }
        Ok(())
    }
}

/// Adversarial images paired with the originals' ground-truth labels.
#[derive(Debug, Clone)]
pub struct AdversarialSet {
    /// Never quantized: exactly the float32 values the attack produced
    /// (clipped to the valid image range by the attack itself).
    pub images: Tensor,
    /// Ground-truth labels of the source images.
    pub labels: Vec<usize>,
    pub manifest: Manifest,
}

impl AdversarialSet {
    pub fn new(images: Tensor, labels: Vec<usize>, manifest: Manifest) -> Result<Self> {
        let set = AdversarialSet {
            images,
            labels,
            manifest,
        };
        set.check()?;
        Ok(set)
    }

    fn check(&self) -> Result<()> {
        self.manifest.validate()?;
        if self.images.batch() != self.labels.len() || self.labels.len() != self.manifest.count {
            return Err(Error::Integrity(format!(
                "count mismatch: {} images, {} labels, manifest says {}",
                self.images.batch(),
                self.labels.len(),
                self.manifest.count
            )));
        }
        self.images.check_finite("adversarial set images")?;
        Ok(())
    }

    /// Writes `images.apet`, `labels.apet` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.check()?;
        std::fs::create_dir_all(dir)?;
        crate::data::save_tensor_archive(&self.images, &dir.join("images.apet"))?;
        let labels = Tensor::from_vec(
            vec![self.labels.len()],
            self.labels.iter().map(|&l| l as f32).collect(),
        )?;
        crate::data::save_tensor_archive(&labels, &dir.join("labels.apet"))?;
        let json = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(dir.join("manifest.json"), json)?;
        Ok(())
    }

    /// Loads a set saved by [`AdversarialSet::save`], revalidating counts,
    /// the attack name and finiteness.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let images = crate::data::load_tensor_archive(&dir.join("images.apet"))?;
        let labels_t = crate::data::load_tensor_archive(&dir.join("labels.apet"))?;
        let labels: Vec<usize> = labels_t.data().iter().map(|&v| v as usize).collect();
        AdversarialSet::new(images, labels, manifest)
    }
}
