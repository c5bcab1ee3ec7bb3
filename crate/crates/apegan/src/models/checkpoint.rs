//! Classifier checkpoints: a directory of tensor archives plus JSON spec
//! and training metadata.

use std::path::Path;

use crate::data::{load_tensor_archive, save_tensor_archive};
use crate::error::{Error, Result};
use crate::models::{Classifier, ModelSpec, TrainMeta};
use crate::nn::Network;

pub(crate) fn save_network(net: &Network, dir: &Path) -> Result<()> {
    let params_dir = dir.join("params");
    std::fs::create_dir_all(&params_dir)?;
    for (li, layer) in net.layers().iter().enumerate() {
        for (name, tensor) in layer.state_tensors() {
            save_tensor_archive(tensor, &params_dir.join(format!("l{li:02}_{name}.apet")))?;
        }
    }
    Ok(())
}

pub(crate) fn load_network_into(net: &mut Network, dir: &Path) -> Result<()> {
    let params_dir = dir.join("params");
    for (li, layer) in net.layers_mut().iter_mut().enumerate() {
        for (name, tensor) in layer.state_tensors_mut() {
            let path = params_dir.join(format!("l{li:02}_{name}.apet"));
            let loaded = load_tensor_archive(&path)?;
            if loaded.shape() != tensor.shape() {
                return Err(Error::Integrity(format!(
                    "{}: shape {:?} does not match spec shape {:?}",
                    path.display(),
                    loaded.shape(),
                    tensor.shape()
                )));
            }
            tensor.data_mut().copy_from_slice(loaded.data());
        }
    }
    Ok(())
}

/// Persists spec, metadata and every parameter tensor under `dir`.
pub fn save_classifier(model: &Classifier, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("spec.json"),
        serde_json::to_string_pretty(&model.spec)?,
    )?;
    std::fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&model.meta)?,
    )?;
    save_network(&model.net, dir)
}

/// Loads a checkpoint saved by [`save_classifier`].
pub fn load_classifier(dir: &Path) -> Result<Classifier> {
    let spec: ModelSpec = serde_json::from_str(&std::fs::read_to_string(dir.join("spec.json"))?)?;
    let meta: TrainMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
    let mut net = spec.compile()?;
    load_network_into(&mut net, dir)?;
    Ok(Classifier { spec, net, meta })
}
