//! Dense float32 tensors, row-major.
//!
//! Image batches use NHWC layout throughout: `[batch, height, width, channels]`
//! with pixel intensities in `[0, 1]`.

use crate::error::{Error, Result};

/// A dense row-major float32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Creates a tensor from raw parts, checking that the element count
    /// matches the shape.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("dimensions must be positive, got {shape:?}"),
            ));
        }
        if numel != data.len() {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("shape {shape:?} implies {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Leading dimension, i.e. the batch size for NHWC batches.
    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per leading-dimension slice.
    #[inline]
    pub fn stride0(&self) -> usize {
        self.shape[1..].iter().product()
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Borrows sample `i` of the leading dimension.
    pub fn sample(&self, i: usize) -> &[f32] {
        let s = self.stride0();
        &self.data[i * s..(i + 1) * s]
    }

    /// Reinterprets the buffer under a new shape with equal element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape(
                "Tensor::reshape",
                format!("cannot reshape {:?} to {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Builds a tensor holding the selected leading-dimension slices,
    /// in the order given.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let s = self.stride0();
        let mut data = Vec::with_capacity(indices.len() * s);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor { shape, data }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Errors if any element is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn clamp_(&mut self, lo: f32, hi: f32) {
        for v in &mut self.data {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Per-sample perturbation norms of `self - reference`:
    /// `(l0 count, l2, l_inf)` per leading-dimension slice.
    pub fn perturbation_norms(&self, reference: &Tensor) -> Result<Vec<(usize, f64, f32)>> {
        if self.shape != reference.shape {
            return Err(Error::shape(
                "perturbation_norms",
                format!("{:?} vs {:?}", self.shape, reference.shape),
            ));
        }
        let s = self.stride0();
        let mut out = Vec::with_capacity(self.batch());
        for i in 0..self.batch() {
            let a = &self.data[i * s..(i + 1) * s];
            let b = &reference.data[i * s..(i + 1) * s];
            let mut l0 = 0usize;
            let mut l2 = 0f64;
            let mut linf = 0f32;
            for (&x, &y) in a.iter().zip(b) {
                let d = x - y;
                if d != 0.0 {
                    l0 += 1;
                }
                l2 += f64::from(d) * f64::from(d);
                linf = linf.max(d.abs());
            }
            out.push((l0, l2.sqrt(), linf));
        }
        Ok(out)
    }
}

/// Row-major f32 matrix multiply: `c = alpha * a (m×k) · b (k×n) + beta * c`.
///
/// `a_trans`/`b_trans` multiply by the transpose without materializing it.
#[allow(clippy::too_many_arguments)]
pub fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
