//! Dataset ingestion, benign perturbation and float32 persistence.
//!
//! Adversarial images are stored exactly as computed: quantizing them to
//! 8-bit pixels destroys the perturbation, so sets round-trip through the
//! [`archive`] format (raw little-endian float32) instead of image files.

pub mod advset;
pub mod archive;
pub mod cifar10;
pub mod mnist;
pub mod noise;

pub use advset::{AdversarialSet, Manifest};
pub use archive::{load_tensor_archive, save_tensor_archive};
pub use cifar10::load_cifar10;
pub use mnist::load_mnist;
pub use noise::add_gaussian_noise;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dataset split tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Images with ground-truth class labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    /// `(N, H, W, C)` pixel intensities in `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, split: Split) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::shape(
                "LabeledDataset",
                format!("expected rank-4 images, got {:?}", images.shape()),
            ));
        }
        if images.batch() != labels.len() {
            return Err(Error::Integrity(format!(
                "{} images vs {} labels",
                images.batch(),
                labels.len()
            )));
        }
        if images.min() < 0.0 || images.max() > 1.0 {
            return Err(Error::Integrity(format!(
                "pixel range [{}, {}] outside [0, 1]",
                images.min(),
                images.max()
            )));
        }
        Ok(LabeledDataset {
            images,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Selects a subset by index list, preserving order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            images: self.images.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
        }
    }
}
