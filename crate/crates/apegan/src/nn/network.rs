//! Sequential networks: spec compilation, forward passes and reverse-mode
//! backpropagation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerAux, LayerGrads, LayerSpec};
use crate::par::Parallelism;
use crate::rng::{derive, SeededRng};
use crate::tensor::Tensor;

/// Output head of a network: a trailing softmax or sigmoid is not applied by
/// [`Network::forward`], which always returns pre-activation values
/// ("logits"). Callers apply the head where probabilities are needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    None,
    Softmax,
    Sigmoid,
}

/// Activations and auxiliary state captured by [`Network::forward_cached`],
/// consumed by [`Network::backward`].
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[i + 1]` is layer `i`'s output.
    pub activations: Vec<Tensor>,
    pub aux: Vec<LayerAux>,
    pub training: bool,
}

impl ForwardCache {
    /// Network output (pre-head).
    pub fn output(&self) -> &Tensor {
        self.activations.last().unwrap()
    }
}

/// A compiled sequential network.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: (usize, usize, usize),
    head: Head,
    /// Number of layers evaluated by forward passes (head excluded).
    compute_len: usize,
}

impl Network {
    /// Compiles a layer-spec sequence for the given per-sample input shape,
    /// validating every intermediate shape. Parameters are zero until
    /// [`Network::init_params`] runs.
    pub fn build(specs: &[LayerSpec], input_shape: (usize, usize, usize)) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape;
        for (i, spec) in specs.iter().enumerate() {
            let layer = Layer::build(spec.clone(), shape, i)?;
            shape = layer.out_shape;
            layers.push(layer);
        }
        let head = match specs.last().unwrap() {
            LayerSpec::Softmax => Head::Softmax,
            LayerSpec::Sigmoid => Head::Sigmoid,
            _ => Head::None,
        };
        let compute_len = if head == Head::None {
            layers.len()
        } else {
            layers.len() - 1
        };
        Ok(Network {
            layers,
            input_shape,
            head,
            compute_len,
        })
    }

    pub fn init_params(&mut self, seed: u64) {
        let mut rng = derive(seed, "init");
        for layer in &mut self.layers {
            layer.init_params(&mut rng);
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    /// Per-sample output shape (pre-head).
    pub fn output_shape(&self) -> (usize, usize, usize) {
        self.layers[self.compute_len - 1].out_shape
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (h, w, c) = self.input_shape;
        if x.rank() != 4 || x.shape()[1] != h || x.shape()[2] != w || x.shape()[3] != c {
            return Err(Error::shape(
                "network input",
                format!("expected (N, {h}, {w}, {c}), got {:?}", x.shape()),
            ));
        }
        Ok(())
    }

    /// Inference forward pass: dropout disabled, batchnorm on running
    /// statistics. Deterministic. Returns pre-head output.
    pub fn forward(&self, x: &Tensor, mode: Parallelism) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers[..self.compute_len] {
            let (out, _) = layer.forward(&cur, false, None, mode);
            cur = out;
        }
        Ok(cur)
    }

    /// Inference forward pass that keeps activations for a backward pass
    /// (used for input gradients).
    pub fn forward_cached(&self, x: &Tensor, mode: Parallelism) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.compute_len + 1);
        let mut aux = Vec::with_capacity(self.compute_len);
        activations.push(x.clone());
        for layer in &self.layers[..self.compute_len] {
            let (out, a) = layer.forward(activations.last().unwrap(), false, None, mode);
            activations.push(out);
            aux.push(a);
        }
        Ok(ForwardCache {
            activations,
            aux,
            training: false,
        })
    }

    /// Training forward pass: dropout active (drawing masks from `rng`),
    /// batchnorm on batch statistics. Running statistics are updated.
    pub fn forward_train(
        &mut self,
        x: &Tensor,
        rng: &mut SeededRng,
        mode: Parallelism,
    ) -> Result<ForwardCache> {
        self.check_input(x)?;
        let compute_len = self.compute_len;
        let mut activations = Vec::with_capacity(compute_len + 1);
        let mut aux = Vec::with_capacity(compute_len);
        activations.push(x.clone());
        for layer in &mut self.layers[..compute_len] {
            let (out, a) = layer.forward(activations.last().unwrap(), true, Some(rng), mode);
            layer.update_running_stats(&a);
            activations.push(out);
            aux.push(a);
        }
        Ok(ForwardCache {
            activations,
            aux,
            training: true,
        })
    }

    /// Backpropagates `seed` (gradient w.r.t. the pre-head output) through
    /// the cached pass. Returns the gradient w.r.t. the input and, when
    /// requested, per-layer parameter gradients aligned with
    /// [`Network::trainable_params`].
    pub fn backward(
        &self,
        cache: &ForwardCache,
        seed: &Tensor,
        want_param_grads: bool,
        mode: Parallelism,
    ) -> (Tensor, Option<Vec<Tensor>>) {
        assert_eq!(
            seed.shape(),
            cache.output().shape(),
            "backward seed shape mismatch"
        );
        let mut grad = seed.clone();
        let mut param_grads: Vec<Vec<Tensor>> = Vec::new();
        for (i, layer) in self.layers[..self.compute_len].iter().enumerate().rev() {
            let (dx, grads) = layer.backward(
                &cache.activations[i],
                &cache.activations[i + 1],
                &grad,
                &cache.aux[i],
                cache.training,
                want_param_grads,
                mode,
            );
            if want_param_grads {
                if let Some(LayerGrads { tensors }) = grads {
                    param_grads.push(tensors);
                } else if !layer.trainable().is_empty() {
                    panic!("layer {i} produced no gradients for its parameters");
                }
            }
            grad = dx;
        }
        let flat = want_param_grads.then(|| {
            param_grads.reverse();
            param_grads.into_iter().flatten().collect()
        });
        (grad, flat)
    }

    /// Flat list of trainable parameter tensors, in layer order.
    pub fn trainable_params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.trainable()).collect()
    }

    pub fn trainable_params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.trainable_mut())
            .collect()
    }

    /// Total trainable parameter count.
    pub fn param_count(&self) -> usize {
        self.trainable_params().iter().map(|t| t.numel()).sum()
    }
}
