//! The APE-GAN defense: perturbation-eliminating generator, discriminator,
//! fusion loss and the purification inference path.
//!
//! Training consumes only (adversarial, clean) image pairs — no classifier
//! type is reachable from this module's training interface.

mod loss;
mod purify;
mod train;

pub use loss::{adversarial_loss, discriminator_loss, generator_loss, mse_loss, LossBreakdown};
pub use purify::PurifierState;
pub use train::{train_apegan, ApeGanConfig, TrainingPairs};
