//! Target-model architectures, classifier training and evaluation.

mod checkpoint;
mod digest;
mod eval;
mod train;
mod zoo;

pub use checkpoint::{load_classifier, save_classifier};
pub use digest::model_digest;
pub use eval::{accuracy, error_rate, predictions};
pub(crate) use checkpoint::{load_network_into as load_network_from, save_network as save_network_to};

pub(crate) fn eval_batch() -> usize {
    eval::EVAL_BATCH
}
pub use train::{adversarial_training, train_classifier, AdversarialTrainConfig, TrainConfig};
pub use zoo::{builtin_spec, known_model_names, ModelSpec};

use serde::{Deserialize, Serialize};

use crate::nn::Network;

/// Training provenance carried by a classifier.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    /// Clean test error (percent) measured right after training.
    pub clean_error: Option<f64>,
    /// Present when the model was adversarially trained.
    pub adversarial: Option<AdversarialMeta>,
    /// Mean training loss per epoch.
    #[serde(default)]
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdversarialMeta {
    pub eps: f32,
    pub alpha_blend: f32,
}

/// A trained (or initialized) classifier: spec, compiled network, metadata.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub spec: ModelSpec,
    pub net: Network,
    pub meta: TrainMeta,
}

impl Classifier {
    /// Builds a fresh classifier with seeded initialization.
    pub fn init(spec: ModelSpec, seed: u64) -> crate::Result<Self> {
        let mut net = spec.compile()?;
        net.init_params(seed);
        Ok(Classifier {
            spec,
            net,
            meta: TrainMeta {
                seed,
                ..TrainMeta::default()
            },
        })
    }

    pub fn digest(&self) -> String {
        model_digest(self)
    }
}
