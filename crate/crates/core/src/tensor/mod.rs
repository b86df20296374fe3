//! Dense tensors, a reverse-mode tape, and SGD with momentum.
//!
//! Everything here is single-threaded with a fixed reduction order, so the
//! same inputs always produce bit-identical outputs. Training runs in `f32`;
//! gradient checks instantiate the same code with `f64`.

mod gradcheck;
pub mod kernels;
mod optim;
mod tape;

pub use gradcheck::{finite_difference_gradient, max_relative_error, relative_error};
pub use optim::OptimizerState;
pub use tape::{Tape, Var};

use std::fmt::Debug;

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point element type of a [`Tensor`].
pub trait Element: Float + Debug + Default + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major dense array with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Element = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Tensor::new"));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn from_vec(data: Vec<T>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the values. Callers must keep entries finite.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub(crate) fn set_grad(&mut self, g: Vec<T>) {
        debug_assert_eq!(g.len(), self.data.len());
        self.grad = Some(g);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    /// Element-wise conversion through `f64`.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            grad: None,
            requires_grad: self.requires_grad,
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<T>) -> Self {
        Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        }
    }
}

pub(crate) fn check_finite<T: Element>(data: &[T], op: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

/// Plain (untracked) matrix product.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k, n) = kernels::matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![T::zero(); m * n];
    kernels::matmul_nn(a.data(), b.data(), &mut out, m, k, n);
    check_finite(&out, "matmul")?;
    Ok(Tensor::from_parts_unchecked(vec![m, n], out))
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .map(|&v| if v > T::zero() { v } else { T::zero() })
        .collect();
    Tensor::from_parts_unchecked(x.shape().to_vec(), data)
}

/// Plain (untracked) 3×3 valid cross-correlation.
pub fn conv2d<T: Element>(x: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let dims = kernels::conv_dims(x.shape(), kernel.shape())?;
    let mut out = vec![T::zero(); dims.out_len()];
    kernels::conv2d_forward(x.data(), kernel.data(), &mut out, &dims);
    check_finite(&out, "conv2d")?;
    Ok(Tensor::from_parts_unchecked(dims.out_shape(), out))
}

/// Row-wise softmax of a `b×c` tensor, max-subtracted.
pub fn softmax_rows<T: Element>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, c] = logits.shape() else {
        return Err(Error::Dimension(format!(
            "softmax expects b×c, got {:?}",
            logits.shape()
        )));
    };
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(*c) {
        kernels::softmax_in_place(row);
    }
    Ok(Tensor::from_parts_unchecked(logits.shape().to_vec(), out))
}
