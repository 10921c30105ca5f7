//! Dense-tensor substrate: immutable `Tensor` values, a Wengert tape for
//! reverse-mode differentiation, and verified second-order products
//! (Hessian-vector and mixed parameter/curvature partials).
//!
//! Tensors are plain immutable values and safe to share across threads; a
//! [`Tape`] is single-threaded and consumed by its one backward pass.

pub mod api;
pub mod real;
pub mod tape;

pub use api::{
    grad_wrt_c, gradient, hvp, mixed_partial_c, value, value_and_gradient, HvpMode, Objective,
    Scaled,
};
pub use real::{Dual, Real};
pub use tape::{Tape, Var};

use crate::error::{Error, Result};

/// Dense real-valued array of rank ≤ 2 with an optional gradient record.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Contract("zero-sized tensor dimension".into()));
        }
        if shape.len() > 2 {
            return Err(Error::Contract(format!(
                "rank {} unsupported (max 2)",
                shape.len()
            )));
        }
        if numel != data.len() {
            return Err(Error::Contract(format!(
                "shape {:?} does not match data length {}",
                shape,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: true,
            grad: None,
        })
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::new(vec![n], data).expect("non-empty vector")
    }

    pub fn scalar(x: f64) -> Self {
        Tensor::from_vec(vec![x])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel]).expect("valid shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Attach a gradient record; its length must match the data.
    pub fn attach_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::Contract(format!(
                "gradient length {} does not match tensor length {}",
                grad.len(),
                self.data.len()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.numel() != other.numel() {
            return Err(Error::Contract("dot of mismatched lengths".into()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    /// Flatten to rank 1.
    pub fn flattened(&self) -> Tensor {
        Tensor::from_vec(self.data.clone())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        let data = self.data.iter().map(|x| x * k).collect();
        Tensor::new(self.shape.clone(), data).expect("same shape")
    }

    /// self + k·other.
    pub fn axpy(&self, k: f64, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + k * b)
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Contract(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::new(self.shape.clone(), data)
    }
}
