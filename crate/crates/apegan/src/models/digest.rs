//! Content digests for model provenance.

use sha2::{Digest, Sha256};

use crate::models::Classifier;
use crate::nn::Network;

/// Stable content hash over the architecture and every state tensor
/// (weights, biases, batchnorm statistics). Any parameter change produces a
/// different digest.
pub fn model_digest(model: &Classifier) -> String {
    let spec_json = serde_json::to_vec(&model.spec).expect("spec serializes");
    network_digest_with(&model.net, &spec_json)
}

pub(crate) fn network_digest_with(net: &Network, prefix: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(prefix);
    for (li, layer) in net.layers().iter().enumerate() {
        for (name, tensor) in layer.state_tensors() {
            hasher.update((li as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            for &d in tensor.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for &v in tensor.data() {
                hasher.update(v.to_le_bytes());
            }
        }
    }
    let hex = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<String>();
    hex[..16].to_string()
}
