//! Built-in architectures.
//!
//! Models A, B and C are the MNIST targets; D is the CIFAR10 target.
//! `G_*`/`D_*` are the purifier generator/discriminator pairs. The generator
//! downsamples twice with stride-2 convolutions and recovers the resolution
//! with two stride-2 deconvolutions, ending in a sigmoid so outputs are
//! valid images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network};

const LRELU_SLOPE: f32 = 0.2;

/// Declarative architecture: name, input shape and layer sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Per-sample input shape (H, W, C).
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Compiles into a network, validating every intermediate shape.
    pub fn compile(&self) -> Result<Network> {
        Network::build(&self.layers, self.input)
    }
}

pub fn known_model_names() -> &'static [&'static str] {
    &["A", "B", "C", "D", "G_mnist", "D_mnist", "G_cifar", "D_cifar"]
}

/// Returns the named built-in architecture.
pub fn builtin_spec(name: &str) -> Result<ModelSpec> {
    use LayerSpec::*;
    let (input, layers) = match name {
        "A" => (
            (28, 28, 1),
            vec![
                ConvS1 { out_ch: 32, kh: 3, kw: 3 },
                Relu,
                ConvS1 { out_ch: 64, kh: 3, kw: 3 },
                Relu,
                Maxpool2,
                Dropout { rate: 0.25 },
                Dense { width: 128 },
                Relu,
                Dropout { rate: 0.5 },
                Dense { width: 10 },
                Softmax,
            ],
        ),
        "B" => (
            (28, 28, 1),
            vec![
                ConvS1 { out_ch: 32, kh: 3, kw: 3 },
                Relu,
                ConvS1 { out_ch: 32, kh: 3, kw: 3 },
                Relu,
                Maxpool2,
                ConvS1 { out_ch: 64, kh: 3, kw: 3 },
                Relu,
                ConvS1 { out_ch: 64, kh: 3, kw: 3 },
                Relu,
                Maxpool2,
                Dense { width: 200 },
                Relu,
                Dense { width: 200 },
                Relu,
                Dense { width: 10 },
                Softmax,
            ],
        ),
        "C" => (
            (28, 28, 1),
            vec![
                ConvS2 { out_ch: 64, kh: 8, kw: 8 },
                Relu,
                ConvS2 { out_ch: 128, kh: 6, kw: 6 },
                Relu,
                ConvS1 { out_ch: 128, kh: 5, kw: 5 },
                Relu,
                Dense { width: 10 },
                Softmax,
            ],
        ),
        "D" => (
            (32, 32, 3),
            vec![
                ConvS1 { out_ch: 64, kh: 3, kw: 3 },
                Relu,
                ConvS1 { out_ch: 64, kh: 3, kw: 3 },
                Relu,
                Maxpool2,
                ConvS1 { out_ch: 128, kh: 3, kw: 3 },
                Relu,
                ConvS1 { out_ch: 128, kh: 3, kw: 3 },
                Relu,
                Maxpool2,
                Dense { width: 256 },
                Relu,
                Dense { width: 256 },
                Relu,
                Dense { width: 10 },
                Softmax,
            ],
        ),
        "G_mnist" => ((28, 28, 1), generator_layers(1)),
        "G_cifar" => ((32, 32, 3), generator_layers(3)),
        "D_mnist" => ((28, 28, 1), discriminator_layers()),
        "D_cifar" => ((32, 32, 3), discriminator_layers()),
        _ => {
            return Err(Error::UnknownName {
                name: name.to_string(),
                known: known_model_names().join(", "),
            })
        }
    };
    let spec = ModelSpec {
        name: name.to_string(),
        input,
        layers,
    };
    spec.compile()?; // every builtin must be shape-consistent
    Ok(spec)
}

fn generator_layers(out_channels: usize) -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        ConvS2 { out_ch: 64, kh: 3, kw: 3 },
        Batchnorm,
        Lrelu { slope: LRELU_SLOPE },
        ConvS2 { out_ch: 128, kh: 3, kw: 3 },
        Batchnorm,
        Lrelu { slope: LRELU_SLOPE },
        DeconvS2 { out_ch: 64, kh: 3, kw: 3 },
        Batchnorm,
        Lrelu { slope: LRELU_SLOPE },
        DeconvS2 { out_ch: out_channels, kh: 3, kw: 3 },
        Sigmoid,
    ]
}

fn discriminator_layers() -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        ConvS2 { out_ch: 64, kh: 3, kw: 3 },
        Lrelu { slope: LRELU_SLOPE },
        ConvS2 { out_ch: 128, kh: 3, kw: 3 },
        Batchnorm,
        Lrelu { slope: LRELU_SLOPE },
        ConvS2 { out_ch: 256, kh: 3, kw: 3 },
        Batchnorm,
        Lrelu { slope: LRELU_SLOPE },
        Dense { width: 1 },
        Sigmoid,
    ]
}
