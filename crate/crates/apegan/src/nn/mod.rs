//! Minimal differentiable substrate.
//!
//! Supports exactly the layer kinds the target models and the purifier
//! networks need, with reverse-mode gradients with respect to parameters and
//! inputs. Networks are plain layer sequences; convolutions use `same` zero
//! padding and im2col + GEMM.

mod adam;
mod gradcheck;
mod layer;
mod loss;
mod network;

pub use adam::{adam_update, AdamState};
pub use gradcheck::{finite_difference_check, input_fd_check, param_fd_check};
pub use layer::{ConvGeom, Layer, LayerAux, LayerGrads, LayerSpec};
pub use loss::{cross_entropy, cross_entropy_grad, per_sample_cross_entropy_grad, softmax};
pub use network::{ForwardCache, Head, Network};
