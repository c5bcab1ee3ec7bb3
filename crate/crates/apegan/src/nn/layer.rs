//! Layer kinds, their parameters and per-layer forward/backward kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::rng::{truncated_normal, SeededRng};
use crate::tensor::{sgemm, Tensor};

/// Declarative layer description.
///
/// Convolutions and the transposed convolution use `same` zero padding:
/// stride-1 keeps the spatial size, stride-2 halves it (rounding up), and
/// the stride-2 deconvolution exactly doubles it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    ConvS1 { out_ch: usize, kh: usize, kw: usize },
    ConvS2 { out_ch: usize, kh: usize, kw: usize },
    DeconvS2 { out_ch: usize, kh: usize, kw: usize },
    Maxpool2,
    Dense { width: usize },
    Dropout { rate: f32 },
    Batchnorm,
    Relu,
    Lrelu { slope: f32 },
    Sigmoid,
    Softmax,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::ConvS1 { .. } => "conv_s1",
            LayerSpec::ConvS2 { .. } => "conv_s2",
            LayerSpec::DeconvS2 { .. } => "deconv_s2",
            LayerSpec::Maxpool2 => "maxpool2",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Batchnorm => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::Lrelu { .. } => "lrelu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::ConvS1 { out_ch, kh, kw }
            | LayerSpec::ConvS2 { out_ch, kh, kw }
            | LayerSpec::DeconvS2 { out_ch, kh, kw } => {
                if out_ch == 0 || kh == 0 || kw == 0 {
                    return Err(Error::config(format!(
                        "{}: channels and kernel sizes must be positive",
                        self.kind_name()
                    )));
                }
            }
            LayerSpec::Dense { width } => {
                if width == 0 {
                    return Err(Error::config("dense: width must be positive"));
                }
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::config(format!(
                        "dropout: rate must be in [0,1), got {rate}"
                    )));
                }
            }
            LayerSpec::Lrelu { slope } => {
                if !slope.is_finite() {
                    return Err(Error::config("lrelu: slope must be finite"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Geometry of a `same`-padded convolution. A stride-2 deconvolution reuses
/// the geometry of the stride-2 convolution it inverts.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: isize,
    pub pad_left: isize,
}

impl ConvGeom {
    pub fn same(in_hw: (usize, usize, usize), out_ch: usize, kh: usize, kw: usize, stride: usize) -> Self {
        let (in_h, in_w, in_c) = in_hw;
        let out_h = in_h.div_ceil(stride);
        let out_w = in_w.div_ceil(stride);
        let pad_h = ((out_h - 1) * stride + kh).saturating_sub(in_h);
        let pad_w = ((out_w - 1) * stride + kw).saturating_sub(in_w);
        ConvGeom {
            in_h,
            in_w,
            in_c,
            out_h,
            out_w,
            out_c: out_ch,
            kh,
            kw,
            stride,
            pad_top: (pad_h / 2) as isize,
            pad_left: (pad_w / 2) as isize,
        }
    }

    fn cols(&self) -> usize {
        self.kh * self.kw * self.in_c
    }
}

const BN_EPS: f32 = 1e-5;
const BN_MOMENTUM: f32 = 0.9;

/// A layer plus its runtime parameters.
#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    /// Per-sample input shape (H, W, C).
    pub in_shape: (usize, usize, usize),
    /// Per-sample output shape (H, W, C).
    pub out_shape: (usize, usize, usize),
    pub params: LayerParams,
}

/// Parameter storage. Weight layouts:
/// convolution `(kh*kw*in_c, out_c)`, deconvolution `(kh*kw*out_c, in_c)`,
/// dense `(in_features, width)`.
#[derive(Debug, Clone)]
pub enum LayerParams {
    None,
    Conv { w: Tensor, b: Tensor },
    Deconv { w: Tensor, b: Tensor },
    Dense { w: Tensor, b: Tensor },
    Batchnorm {
        gamma: Tensor,
        beta: Tensor,
        running_mean: Tensor,
        running_var: Tensor,
    },
}

/// Parameter gradients, mirroring the trainable tensors of
/// [`Layer::trainable`].
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub tensors: Vec<Tensor>,
}

/// Extra per-layer state captured during a training-mode forward pass that
/// the backward pass cannot reconstruct.
#[derive(Debug, Clone)]
pub enum LayerAux {
    None,
    /// Inverted-dropout mask, scale included.
    Dropout(Vec<f32>),
    /// Batch statistics used for normalization.
    Batchnorm { mean: Vec<f32>, var: Vec<f32> },
}

impl Layer {
    /// Builds a layer for a given input shape, deriving the output shape.
    /// Fails when the shape arithmetic collapses to zero.
    pub fn build(spec: LayerSpec, in_shape: (usize, usize, usize), index: usize) -> Result<Self> {
        spec.validate()?;
        let (h, w, c) = in_shape;
        let dim_err = |msg: String| {
            Err(Error::shape(
                format!("layer {index} ({})", spec.kind_name()),
                msg,
            ))
        };
        let (out_shape, params) = match spec {
            LayerSpec::ConvS1 { out_ch, kh, kw } | LayerSpec::ConvS2 { out_ch, kh, kw } => {
                let stride = if matches!(spec, LayerSpec::ConvS1 { .. }) { 1 } else { 2 };
                let g = ConvGeom::same((h, w, c), out_ch, kh, kw, stride);
                (
                    (g.out_h, g.out_w, out_ch),
                    LayerParams::Conv {
                        w: Tensor::zeros(&[g.cols(), out_ch]),
                        b: Tensor::zeros(&[out_ch]),
                    },
                )
            }
            LayerSpec::DeconvS2 { out_ch, kh, kw } => {
                // Adjoint of the stride-2 conv mapping (2h, 2w, out_ch) -> (h, w, c).
                let g = ConvGeom::same((2 * h, 2 * w, out_ch), c, kh, kw, 2);
                debug_assert_eq!((g.out_h, g.out_w), (h, w));
                (
                    (2 * h, 2 * w, out_ch),
                    LayerParams::Deconv {
                        w: Tensor::zeros(&[g.cols(), c]),
                        b: Tensor::zeros(&[out_ch]),
                    },
                )
            }
            LayerSpec::Maxpool2 => {
                if h < 2 || w < 2 {
                    return dim_err(format!("cannot pool {h}x{w} input"));
                }
                ((h / 2, w / 2, c), LayerParams::None)
            }
            LayerSpec::Dense { width } => (
                (1, 1, width),
                LayerParams::Dense {
                    w: Tensor::zeros(&[h * w * c, width]),
                    b: Tensor::zeros(&[width]),
                },
            ),
            LayerSpec::Batchnorm => (
                in_shape,
                LayerParams::Batchnorm {
                    gamma: Tensor::full(&[c], 1.0),
                    beta: Tensor::zeros(&[c]),
                    running_mean: Tensor::zeros(&[c]),
                    running_var: Tensor::full(&[c], 1.0),
                },
            ),
            LayerSpec::Dropout { .. }
            | LayerSpec::Relu
            | LayerSpec::Lrelu { .. }
            | LayerSpec::Sigmoid
            | LayerSpec::Softmax => (in_shape, LayerParams::None),
        };
        if out_shape.0 == 0 || out_shape.1 == 0 || out_shape.2 == 0 {
            return dim_err(format!("output shape collapsed to {out_shape:?}"));
        }
        Ok(Layer {
            spec,
            in_shape,
            out_shape,
            params,
        })
    }

    /// Initializes parameters: truncated normal (std 0.02) for conv/deconv,
    /// fan-in-scaled truncated normal for dense layers.
    pub fn init_params(&mut self, rng: &mut SeededRng) {
        match &mut self.params {
            LayerParams::Conv { w, .. } | LayerParams::Deconv { w, .. } => {
                for v in w.data_mut() {
                    *v = truncated_normal(rng, 0.02);
                }
            }
            LayerParams::Dense { w, .. } => {
                let fan_in = w.shape()[0] as f32;
                let std = fan_in.sqrt().recip();
                for v in w.data_mut() {
                    *v = truncated_normal(rng, std);
                }
            }
            _ => {}
        }
    }

    /// Trainable parameter tensors (running statistics excluded).
    pub fn trainable(&self) -> Vec<&Tensor> {
        match &self.params {
            LayerParams::None => vec![],
            LayerParams::Conv { w, b } | LayerParams::Deconv { w, b } | LayerParams::Dense { w, b } => {
                vec![w, b]
            }
            LayerParams::Batchnorm { gamma, beta, .. } => vec![gamma, beta],
        }
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.params {
            LayerParams::None => vec![],
            LayerParams::Conv { w, b } | LayerParams::Deconv { w, b } | LayerParams::Dense { w, b } => {
                vec![w, b]
            }
            LayerParams::Batchnorm { gamma, beta, .. } => vec![gamma, beta],
        }
    }

    /// All state tensors with stable names, for checkpoints.
    pub fn state_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        match &self.params {
            LayerParams::None => vec![],
            LayerParams::Conv { w, b } | LayerParams::Deconv { w, b } | LayerParams::Dense { w, b } => {
                vec![("weight", w), ("bias", b)]
            }
            LayerParams::Batchnorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => vec![
                ("gamma", gamma),
                ("beta", beta),
                ("running_mean", running_mean),
                ("running_var", running_var),
            ],
        }
    }

    pub fn state_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match &mut self.params {
            LayerParams::None => vec![],
            LayerParams::Conv { w, b } | LayerParams::Deconv { w, b } | LayerParams::Dense { w, b } => {
                vec![("weight", w), ("bias", b)]
            }
            LayerParams::Batchnorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => vec![
                ("gamma", gamma),
                ("beta", beta),
                ("running_mean", running_mean),
                ("running_var", running_var),
            ],
        }
    }

    fn conv_geom(&self) -> ConvGeom {
        match self.spec {
            LayerSpec::ConvS1 { out_ch, kh, kw } => {
                ConvGeom::same(self.in_shape, out_ch, kh, kw, 1)
            }
            LayerSpec::ConvS2 { out_ch, kh, kw } => {
                ConvGeom::same(self.in_shape, out_ch, kh, kw, 2)
            }
            LayerSpec::DeconvS2 { out_ch, kh, kw } => {
                // Geometry of the conv this deconv is the adjoint of.
                ConvGeom::same(
                    (self.out_shape.0, self.out_shape.1, out_ch),
                    self.in_shape.2,
                    kh,
                    kw,
                    2,
                )
            }
            _ => unreachable!("conv_geom on non-conv layer"),
        }
    }

    /// Forward pass over a whole batch.
    ///
    /// `training` enables dropout and batch-statistic normalization; `rng`
    /// is consumed only by dropout. Returns the output and any auxiliary
    /// state the backward pass needs. Batch-norm batch statistics are
    /// reported through the aux value; callers fold them into the running
    /// statistics via [`Layer::update_running_stats`].
    pub fn forward(
        &self,
        x: &Tensor,
        training: bool,
        rng: Option<&mut SeededRng>,
        mode: Parallelism,
    ) -> (Tensor, LayerAux) {
        match &self.spec {
            LayerSpec::ConvS1 { .. } | LayerSpec::ConvS2 { .. } => {
                let g = self.conv_geom();
                let (w, b) = match &self.params {
                    LayerParams::Conv { w, b } => (w, b),
                    _ => unreachable!(),
                };
                (conv_forward(x, w, b, &g, mode), LayerAux::None)
            }
            LayerSpec::DeconvS2 { .. } => {
                let g = self.conv_geom();
                let (w, b) = match &self.params {
                    LayerParams::Deconv { w, b } => (w, b),
                    _ => unreachable!(),
                };
                (deconv_forward(x, w, b, &g, mode), LayerAux::None)
            }
            LayerSpec::Maxpool2 => (maxpool_forward(x, self.in_shape, mode), LayerAux::None),
            LayerSpec::Dense { .. } => {
                let (w, b) = match &self.params {
                    LayerParams::Dense { w, b } => (w, b),
                    _ => unreachable!(),
                };
                (dense_forward(x, w, b), LayerAux::None)
            }
            LayerSpec::Dropout { rate } => {
                if training {
                    let rate = *rate;
                    let rng = rng.expect("training forward requires an RNG for dropout");
                    let keep = 1.0 - rate;
                    let scale = keep.recip();
                    let mask: Vec<f32> = (0..x.numel())
                        .map(|_| {
                            if rand::Rng::random::<f32>(rng) < keep {
                                scale
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let mut out = x.clone();
                    for (v, m) in out.data_mut().iter_mut().zip(&mask) {
                        *v *= m;
                    }
                    (out, LayerAux::Dropout(mask))
                } else {
                    (x.clone(), LayerAux::None)
                }
            }
            LayerSpec::Batchnorm => self.batchnorm_forward(x, training, mode),
            LayerSpec::Relu => (elementwise(x, mode, |v| v.max(0.0)), LayerAux::None),
            LayerSpec::Lrelu { slope } => {
                let s = *slope;
                (
                    elementwise(x, mode, move |v| if v > 0.0 { v } else { s * v }),
                    LayerAux::None,
                )
            }
            LayerSpec::Sigmoid => (
                elementwise(x, mode, |v| 1.0 / (1.0 + (-v).exp())),
                LayerAux::None,
            ),
            LayerSpec::Softmax => {
                let k = self.in_shape.0 * self.in_shape.1 * self.in_shape.2;
                (crate::nn::loss::softmax_rows(x, k), LayerAux::None)
            }
        }
    }

    /// Folds the batch statistics of a training-mode forward pass into the
    /// running statistics (momentum 0.9).
    pub fn update_running_stats(&mut self, aux: &LayerAux) {
        if let (
            LayerParams::Batchnorm {
                running_mean,
                running_var,
                ..
            },
            LayerAux::Batchnorm { mean, var },
        ) = (&mut self.params, aux)
        {
            for (rm, &m) in running_mean.data_mut().iter_mut().zip(mean) {
                *rm = BN_MOMENTUM * *rm + (1.0 - BN_MOMENTUM) * m;
            }
            for (rv, &v) in running_var.data_mut().iter_mut().zip(var) {
                *rv = BN_MOMENTUM * *rv + (1.0 - BN_MOMENTUM) * v;
            }
        }
    }

    fn batchnorm_forward(&self, x: &Tensor, training: bool, mode: Parallelism) -> (Tensor, LayerAux) {
        let c = self.in_shape.2;
        let rows = x.numel() / c;
        let (gamma, beta, running_mean, running_var) = match &self.params {
            LayerParams::Batchnorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => (gamma, beta, running_mean, running_var),
            _ => unreachable!(),
        };
        let (mean, var) = if training {
            let mut mean = vec![0f64; c];
            for row in x.data().chunks_exact(c) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += f64::from(v);
                }
            }
            for m in &mut mean {
                *m /= rows as f64;
            }
            let mut var = vec![0f64; c];
            for row in x.data().chunks_exact(c) {
                for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                    let d = f64::from(v) - m;
                    *s += d * d;
                }
            }
            for s in &mut var {
                *s /= rows as f64;
            }
            let mean: Vec<f32> = mean.iter().map(|&v| v as f32).collect();
            let var: Vec<f32> = var.iter().map(|&v| v as f32).collect();
            (mean, var)
        } else {
            (
                running_mean.data().to_vec(),
                running_var.data().to_vec(),
            )
        };
        let mut scale = vec![0f32; c];
        let mut shift = vec![0f32; c];
        for i in 0..c {
            scale[i] = gamma.data()[i] / (var[i] + BN_EPS).sqrt();
            shift[i] = beta.data()[i] - mean[i] * scale[i];
        }
        let mut out = Tensor::zeros(x.shape());
        let src = x.data();
        par::for_each_chunk_mut(out.data_mut(), c, mode, |ci, chunk| {
            let base = ci * par::CHUNK * c;
            for (j, v) in chunk.iter_mut().enumerate() {
                let ch = j % c;
                *v = src[base + j] * scale[ch] + shift[ch];
            }
        });
        (
            out,
            if training {
                LayerAux::Batchnorm { mean, var }
            } else {
                LayerAux::None
            },
        )
    }

    /// Backward pass. `x` is the cached layer input, `y` the cached output,
    /// `dy` the gradient with respect to the output. Returns the gradient
    /// with respect to the input, plus parameter gradients when
    /// `want_param_grads` is set.
    pub fn backward(
        &self,
        x: &Tensor,
        y: &Tensor,
        dy: &Tensor,
        aux: &LayerAux,
        training: bool,
        want_param_grads: bool,
        mode: Parallelism,
    ) -> (Tensor, Option<LayerGrads>) {
        match &self.spec {
            LayerSpec::ConvS1 { .. } | LayerSpec::ConvS2 { .. } => {
                let g = self.conv_geom();
                let w = match &self.params {
                    LayerParams::Conv { w, .. } => w,
                    _ => unreachable!(),
                };
                conv_backward(x, dy, w, &g, want_param_grads, mode)
            }
            LayerSpec::DeconvS2 { .. } => {
                let g = self.conv_geom();
                let w = match &self.params {
                    LayerParams::Deconv { w, .. } => w,
                    _ => unreachable!(),
                };
                deconv_backward(x, dy, w, &g, want_param_grads, mode)
            }
            LayerSpec::Maxpool2 => (maxpool_backward(x, dy, self.in_shape, mode), None),
            LayerSpec::Dense { .. } => {
                let w = match &self.params {
                    LayerParams::Dense { w, .. } => w,
                    _ => unreachable!(),
                };
                dense_backward(x, dy, w, want_param_grads)
            }
            LayerSpec::Dropout { .. } => {
                if training {
                    let mask = match aux {
                        LayerAux::Dropout(m) => m,
                        _ => panic!("dropout backward without cached mask"),
                    };
                    let mut dx = dy.clone();
                    for (v, m) in dx.data_mut().iter_mut().zip(mask) {
                        *v *= m;
                    }
                    (dx, None)
                } else {
                    (dy.clone(), None)
                }
            }
            LayerSpec::Batchnorm => self.batchnorm_backward(x, dy, aux, training, want_param_grads),
            LayerSpec::Relu => {
                let mut dx = dy.clone();
                for (v, &o) in dx.data_mut().iter_mut().zip(y.data()) {
                    if o <= 0.0 {
                        *v = 0.0;
                    }
                }
                (dx, None)
            }
            LayerSpec::Lrelu { slope } => {
                // slope > 0 keeps the input sign observable in the output
                let mut dx = dy.clone();
                for (v, &o) in dx.data_mut().iter_mut().zip(y.data()) {
                    if o < 0.0 || (o == 0.0 && *slope == 0.0) {
                        *v *= slope;
                    }
                }
                (dx, None)
            }
            LayerSpec::Sigmoid => {
                let mut dx = dy.clone();
                for (v, &o) in dx.data_mut().iter_mut().zip(y.data()) {
                    *v *= o * (1.0 - o);
                }
                (dx, None)
            }
            LayerSpec::Softmax => {
                let k = self.in_shape.0 * self.in_shape.1 * self.in_shape.2;
                let mut dx = Tensor::zeros(dy.shape());
                for ((drow, yrow), orow) in dx
                    .data_mut()
                    .chunks_exact_mut(k)
                    .zip(y.data().chunks_exact(k))
                    .zip(dy.data().chunks_exact(k))
                {
                    let dot: f32 = yrow.iter().zip(orow).map(|(&a, &b)| a * b).sum();
                    for i in 0..k {
                        drow[i] = yrow[i] * (orow[i] - dot);
                    }
                }
                (dx, None)
            }
        }
    }

    fn batchnorm_backward(
        &self,
        x: &Tensor,
        dy: &Tensor,
        aux: &LayerAux,
        training: bool,
        want_param_grads: bool,
    ) -> (Tensor, Option<LayerGrads>) {
        let c = self.in_shape.2;
        let rows = x.numel() / c;
        let (gamma, running_mean, running_var) = match &self.params {
            LayerParams::Batchnorm {
                gamma,
                running_mean,
                running_var,
                ..
            } => (gamma, running_mean, running_var),
            _ => unreachable!(),
        };
        let (mean, var): (&[f32], &[f32]) = if training {
            match aux {
                LayerAux::Batchnorm { mean, var } => (mean, var),
                _ => panic!("batchnorm backward without cached statistics"),
            }
        } else {
            (running_mean.data(), running_var.data())
        };
        let inv_std: Vec<f32> = var.iter().map(|&v| (v + BN_EPS).sqrt().recip()).collect();

        // Accumulate per-channel sums of dy and dy * x_hat.
        let mut sum_dy = vec![0f64; c];
        let mut sum_dy_xhat = vec![0f64; c];
        for (xrow, drow) in x.data().chunks_exact(c).zip(dy.data().chunks_exact(c)) {
            for ch in 0..c {
                let xhat = (xrow[ch] - mean[ch]) * inv_std[ch];
                sum_dy[ch] += f64::from(drow[ch]);
                sum_dy_xhat[ch] += f64::from(drow[ch]) * f64::from(xhat);
            }
        }

        let grads = want_param_grads.then(|| {
            let dgamma: Vec<f32> = sum_dy_xhat.iter().map(|&v| v as f32).collect();
            let dbeta: Vec<f32> = sum_dy.iter().map(|&v| v as f32).collect();
            LayerGrads {
                tensors: vec![
                    Tensor::from_vec(vec![c], dgamma).unwrap(),
                    Tensor::from_vec(vec![c], dbeta).unwrap(),
                ],
            }
        });

        let mut dx = Tensor::zeros(x.shape());
        if training {
            let m = rows as f32;
            let mean_dy: Vec<f32> = sum_dy.iter().map(|&v| (v as f32) / m).collect();
            let mean_dy_xhat: Vec<f32> = sum_dy_xhat.iter().map(|&v| (v as f32) / m).collect();
            for ((dxrow, xrow), drow) in dx
                .data_mut()
                .chunks_exact_mut(c)
                .zip(x.data().chunks_exact(c))
                .zip(dy.data().chunks_exact(c))
            {
                for ch in 0..c {
                    let xhat = (xrow[ch] - mean[ch]) * inv_std[ch];
                    dxrow[ch] = gamma.data()[ch]
                        * inv_std[ch]
                        * (drow[ch] - mean_dy[ch] - xhat * mean_dy_xhat[ch]);
                }
            }
        } else {
            for (dxrow, drow) in dx
                .data_mut()
                .chunks_exact_mut(c)
                .zip(dy.data().chunks_exact(c))
            {
                for ch in 0..c {
                    dxrow[ch] = drow[ch] * gamma.data()[ch] * inv_std[ch];
                }
            }
        }
        (dx, grads)
    }
}

fn elementwise(x: &Tensor, mode: Parallelism, f: impl Fn(f32) -> f32 + Sync) -> Tensor {
    let mut out = x.clone();
    par::for_each_chunk_mut(out.data_mut(), 1, mode, |_, chunk| {
        for v in chunk {
            *v = f(*v);
        }
    });
    out
}

/// Fills the im2col patch matrix for samples `[n0, n1)` of `x`.
/// Rows iterate (sample, out_y, out_x); columns iterate (ky, kx, in_c).
fn im2col(x: &[f32], g: &ConvGeom, n0: usize, n1: usize, a: &mut [f32]) {
    let cols = g.cols();
    let row_in = g.in_w * g.in_c;
    let sample_in = g.in_h * row_in;
    let seg = g.kw * g.in_c;
    a.fill(0.0);
    let mut r = 0usize;
    for n in n0..n1 {
        let xs = &x[n * sample_in..(n + 1) * sample_in];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let arow = &mut a[r * cols..(r + 1) * cols];
                let ix0 = (ox * g.stride) as isize - g.pad_left;
                for ky in 0..g.kh {
                    let iy = (oy * g.stride) as isize - g.pad_top + ky as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    // clip the kx window to the valid input range
                    let kx_lo = (-ix0).max(0) as usize;
                    let kx_hi = ((g.in_w as isize - ix0).max(0) as usize).min(g.kw);
                    if kx_lo >= kx_hi {
                        continue;
                    }
                    let src0 = iy as usize * row_in + (ix0 + kx_lo as isize) as usize * g.in_c;
                    let dst0 = ky * seg + kx_lo * g.in_c;
                    let len = (kx_hi - kx_lo) * g.in_c;
                    arow[dst0..dst0 + len].copy_from_slice(&xs[src0..src0 + len]);
                }
                r += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds patch-matrix rows back into `dx`.
fn col2im(a: &[f32], g: &ConvGeom, n0: usize, n1: usize, dx: &mut [f32]) {
    let cols = g.cols();
    let row_in = g.in_w * g.in_c;
    let sample_in = g.in_h * row_in;
    let mut r = 0usize;
    for n in 0..(n1 - n0) {
        let xs = &mut dx[n * sample_in..(n + 1) * sample_in];
        let _ = n0;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let arow = &a[r * cols..(r + 1) * cols];
                let ix0 = (ox * g.stride) as isize - g.pad_left;
                for ky in 0..g.kh {
                    let iy = (oy * g.stride) as isize - g.pad_top + ky as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let kx_lo = (-ix0).max(0) as usize;
                    let kx_hi = ((g.in_w as isize - ix0).max(0) as usize).min(g.kw);
                    if kx_lo >= kx_hi {
                        continue;
                    }
                    let dst0 = iy as usize * row_in + (ix0 + kx_lo as isize) as usize * g.in_c;
                    let src0 = ky * g.kw * g.in_c + kx_lo * g.in_c;
                    let len = (kx_hi - kx_lo) * g.in_c;
                    for (d, s) in xs[dst0..dst0 + len].iter_mut().zip(&arow[src0..src0 + len]) {
                        *d += s;
                    }
                }
                r += 1;
            }
        }
    }
}

fn conv_forward(x: &Tensor, w: &Tensor, b: &Tensor, g: &ConvGeom, mode: Parallelism) -> Tensor {
    let n = x.batch();
    let out_stride = g.out_h * g.out_w * g.out_c;
    let mut out = Tensor::zeros(&[n, g.out_h, g.out_w, g.out_c]);
    let cols = g.cols();
    let wd = w.data();
    let bd = b.data();
    let xd = x.data();
    par::for_each_chunk_mut(out.data_mut(), out_stride, mode, |ci, chunk| {
        let (n0, n1) = par::chunk_bounds(ci, n);
        let rows = (n1 - n0) * g.out_h * g.out_w;
        let mut a = vec![0f32; rows * cols];
        im2col(xd, g, n0, n1, &mut a);
        sgemm(rows, cols, g.out_c, 1.0, &a, false, wd, false, 0.0, chunk);
        for orow in chunk.chunks_exact_mut(g.out_c) {
            for (v, &bias) in orow.iter_mut().zip(bd) {
                *v += bias;
            }
        }
    });
    out
}

fn conv_backward(
    x: &Tensor,
    dy: &Tensor,
    w: &Tensor,
    g: &ConvGeom,
    want_param_grads: bool,
    mode: Parallelism,
) -> (Tensor, Option<LayerGrads>) {
    let n = x.batch();
    let cols = g.cols();
    let in_stride = g.in_h * g.in_w * g.in_c;
    let mut dx = Tensor::zeros(x.shape());
    let wd = w.data();
    let xd = x.data();
    let dyd = dy.data();

    // dX: one GEMM + col2im per chunk, written to disjoint slices.
    // dW/db: per-chunk partials, reduced in chunk order.
    let partials: Vec<Option<(Vec<f32>, Vec<f32>)>> = {
        let dx_chunks: Vec<(usize, &mut [f32])> = dx
            .data_mut()
            .chunks_mut(par::CHUNK * in_stride)
            .enumerate()
            .collect();
        let work = |(ci, dx_chunk): (usize, &mut [f32])| -> Option<(Vec<f32>, Vec<f32>)> {
            let (n0, n1) = par::chunk_bounds(ci, n);
            let rows = (n1 - n0) * g.out_h * g.out_w;
            let dy_chunk = &dyd[n0 * g.out_h * g.out_w * g.out_c..][..rows * g.out_c];
            // dA = dY * W^T, then scatter back to input layout
            let mut da = vec![0f32; rows * cols];
            sgemm(rows, g.out_c, cols, 1.0, dy_chunk, false, wd, true, 0.0, &mut da);
            col2im(&da, g, n0, n1, dx_chunk);
            want_param_grads.then(|| {
                let mut a = vec![0f32; rows * cols];
                im2col(xd, g, n0, n1, &mut a);
                let mut dw = vec![0f32; cols * g.out_c];
                sgemm(cols, rows, g.out_c, 1.0, &a, true, dy_chunk, false, 0.0, &mut dw);
                let mut db = vec![0f32; g.out_c];
                for orow in dy_chunk.chunks_exact(g.out_c) {
                    for (s, &v) in db.iter_mut().zip(orow) {
                        *s += v;
                    }
                }
                (dw, db)
            })
        };
        match mode {
            #[cfg(feature = "parallel")]
            Parallelism::Parallel => {
                use rayon::prelude::*;
                dx_chunks.into_par_iter().map(work).collect()
            }
            _ => dx_chunks.into_iter().map(work).collect(),
        }
    };

    let grads = want_param_grads.then(|| {
        let mut dw = vec![0f32; cols * g.out_c];
        let mut db = vec![0f32; g.out_c];
        for p in partials.into_iter().flatten() {
            for (s, v) in dw.iter_mut().zip(p.0) {
                *s += v;
            }
            for (s, v) in db.iter_mut().zip(p.1) {
                *s += v;
            }
        }
        LayerGrads {
            tensors: vec![
                Tensor::from_vec(vec![cols, g.out_c], dw).unwrap(),
                Tensor::from_vec(vec![g.out_c], db).unwrap(),
            ],
        }
    });
    (dx, grads)
}

/// Transposed convolution: the adjoint of the stride-2 conv described by `g`
/// (so `g.in_*` refer to this layer's *output* and `g.out_*` to its input).
fn deconv_forward(x: &Tensor, w: &Tensor, b: &Tensor, g: &ConvGeom, mode: Parallelism) -> Tensor {
    let n = x.batch();
    let cols = g.cols();
    let out_stride = g.in_h * g.in_w * g.in_c;
    let mut out = Tensor::zeros(&[n, g.in_h, g.in_w, g.in_c]);
    let wd = w.data();
    let bd = b.data();
    let xd = x.data();
    let x_stride = g.out_h * g.out_w * g.out_c;
    par::for_each_chunk_mut(out.data_mut(), out_stride, mode, |ci, chunk| {
        let (n0, n1) = par::chunk_bounds(ci, n);
        let rows = (n1 - n0) * g.out_h * g.out_w;
        let x_chunk = &xd[n0 * x_stride..][..rows * g.out_c];
        let mut m = vec![0f32; rows * cols];
        // x (rows, out_c) * W^T (out_c, cols)
        sgemm(rows, g.out_c, cols, 1.0, x_chunk, false, wd, true, 0.0, &mut m);
        col2im(&m, g, n0, n1, chunk);
        for orow in chunk.chunks_exact_mut(g.in_c) {
            for (v, &bias) in orow.iter_mut().zip(bd) {
                *v += bias;
            }
        }
    });
    out
}

fn deconv_backward(
    x: &Tensor,
    dy: &Tensor,
    w: &Tensor,
    g: &ConvGeom,
    want_param_grads: bool,
    mode: Parallelism,
) -> (Tensor, Option<LayerGrads>) {
    let n = x.batch();
    let cols = g.cols();
    let in_stride = g.out_h * g.out_w * g.out_c; // this layer's input
    let mut dx = Tensor::zeros(x.shape());
    let wd = w.data();
    let xd = x.data();
    let dyd = dy.data();

    let partials: Vec<Option<(Vec<f32>, Vec<f32>)>> = {
        let dx_chunks: Vec<(usize, &mut [f32])> = dx
            .data_mut()
            .chunks_mut(par::CHUNK * in_stride)
            .enumerate()
            .collect();
        let work = |(ci, dx_chunk): (usize, &mut [f32])| -> Option<(Vec<f32>, Vec<f32>)> {
            let (n0, n1) = par::chunk_bounds(ci, n);
            let rows = (n1 - n0) * g.out_h * g.out_w;
            // dX = im2col(dY) * W
            let mut a = vec![0f32; rows * cols];
            im2col(dyd, g, n0, n1, &mut a);
            sgemm(rows, cols, g.out_c, 1.0, &a, false, wd, false, 0.0, dx_chunk);
            want_param_grads.then(|| {
                // dW = im2col(dY)^T * x
                let x_chunk = &xd[n0 * in_stride..][..rows * g.out_c];
                let mut dw = vec![0f32; cols * g.out_c];
                sgemm(cols, rows, g.out_c, 1.0, &a, true, x_chunk, false, 0.0, &mut dw);
                let dy_chunk = &dyd[n0 * g.in_h * g.in_w * g.in_c..][..(n1 - n0) * g.in_h * g.in_w * g.in_c];
                let mut db = vec![0f32; g.in_c];
                for orow in dy_chunk.chunks_exact(g.in_c) {
                    for (s, &v) in db.iter_mut().zip(orow) {
                        *s += v;
                    }
                }
                (dw, db)
            })
        };
        match mode {
            #[cfg(feature = "parallel")]
            Parallelism::Parallel => {
                use rayon::prelude::*;
                dx_chunks.into_par_iter().map(work).collect()
            }
            _ => dx_chunks.into_iter().map(work).collect(),
        }
    };

    let grads = want_param_grads.then(|| {
        let mut dw = vec![0f32; cols * g.out_c];
        let mut db = vec![0f32; g.in_c];
        for p in partials.into_iter().flatten() {
            for (s, v) in dw.iter_mut().zip(p.0) {
                *s += v;
            }
            for (s, v) in db.iter_mut().zip(p.1) {
                *s += v;
            }
        }
        LayerGrads {
            tensors: vec![
                Tensor::from_vec(vec![cols, g.out_c], dw).unwrap(),
                Tensor::from_vec(vec![g.in_c], db).unwrap(),
            ],
        }
    });
    (dx, grads)
}

fn maxpool_forward(x: &Tensor, in_shape: (usize, usize, usize), mode: Parallelism) -> Tensor {
    let (h, w, c) = in_shape;
    let (oh, ow) = (h / 2, w / 2);
    let n = x.batch();
    let out_stride = oh * ow * c;
    let in_stride = h * w * c;
    let mut out = Tensor::zeros(&[n, oh, ow, c]);
    let xd = x.data();
    par::for_each_chunk_mut(out.data_mut(), out_stride, mode, |ci, chunk| {
        let (n0, n1) = par::chunk_bounds(ci, n);
        for (local, ni) in (n0..n1).enumerate() {
            let xs = &xd[ni * in_stride..(ni + 1) * in_stride];
            let os = &mut chunk[local * out_stride..(local + 1) * out_stride];
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let i00 = (2 * oy * w + 2 * ox) * c + ch;
                        let i01 = i00 + c;
                        let i10 = i00 + w * c;
                        let i11 = i10 + c;
                        os[(oy * ow + ox) * c + ch] =
                            xs[i00].max(xs[i01]).max(xs[i10]).max(xs[i11]);
                    }
                }
            }
        }
    });
    out
}

fn maxpool_backward(
    x: &Tensor,
    dy: &Tensor,
    in_shape: (usize, usize, usize),
    mode: Parallelism,
) -> Tensor {
    let (h, w, c) = in_shape;
    let (oh, ow) = (h / 2, w / 2);
    let n = x.batch();
    let in_stride = h * w * c;
    let out_stride = oh * ow * c;
    let mut dx = Tensor::zeros(x.shape());
    let xd = x.data();
    let dyd = dy.data();
    par::for_each_chunk_mut(dx.data_mut(), in_stride, mode, |ci, chunk| {
        let (n0, n1) = par::chunk_bounds(ci, n);
        for (local, ni) in (n0..n1).enumerate() {
            let xs = &xd[ni * in_stride..(ni + 1) * in_stride];
            let ds = &dyd[ni * out_stride..(ni + 1) * out_stride];
            let gs = &mut chunk[local * in_stride..(local + 1) * in_stride];
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let i00 = (2 * oy * w + 2 * ox) * c + ch;
                        let idx = [i00, i00 + c, i00 + w * c, i00 + w * c + c];
                        // first maximum wins, matching the forward pass
                        let mut best = idx[0];
                        for &i in &idx[1..] {
                            if xs[i] > xs[best] {
                                best = i;
                            }
                        }
                        gs[best] += ds[(oy * ow + ox) * c + ch];
                    }
                }
            }
        }
    });
    dx
}

fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let n = x.batch();
    let feat = x.stride0();
    let width = w.shape()[1];
    debug_assert_eq!(w.shape()[0], feat);
    let mut out = Tensor::zeros(&[n, 1, 1, width]);
    sgemm(n, feat, width, 1.0, x.data(), false, w.data(), false, 0.0, out.data_mut());
    for orow in out.data_mut().chunks_exact_mut(width) {
        for (v, &bias) in orow.iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    out
}

fn dense_backward(
    x: &Tensor,
    dy: &Tensor,
    w: &Tensor,
    want_param_grads: bool,
) -> (Tensor, Option<LayerGrads>) {
    let n = x.batch();
    let feat = x.stride0();
    let width = w.shape()[1];
    let mut dx = Tensor::zeros(x.shape());
    sgemm(n, width, feat, 1.0, dy.data(), false, w.data(), true, 0.0, dx.data_mut());
    let grads = want_param_grads.then(|| {
        let mut dw = Tensor::zeros(&[feat, width]);
        sgemm(feat, n, width, 1.0, x.data(), true, dy.data(), false, 0.0, dw.data_mut());
        let mut db = vec![0f32; width];
        for orow in dy.data().chunks_exact(width) {
            for (s, &v) in db.iter_mut().zip(orow) {
                *s += v;
            }
        }
        LayerGrads {
            tensors: vec![dw, Tensor::from_vec(vec![width], db).unwrap()],
        }
    });
    (dx, grads)
}
