//! Layers with explicit forward and backward passes.
//!
//! Every trainable layer keeps the input it saw during [`Mode::Train`]
//! forward so that the matching backward call can produce gradients of the
//! batch loss with respect to its input and its parameters. Parameter
//! gradients are stored next to the values in [`Param`] for the optimizer.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod layer;
mod loss;
mod model;
mod tensor;

pub use activation::{activation_apply, activation_backward, ActivationKind, ActivationLayer};
pub use batchnorm::{BatchNorm, BatchNormGrads};
pub use conv::{Conv1d, Conv1dGrads, MaxPool1d};
pub use dense::{Dense, DenseGrads};
pub use layer::Layer;
pub use loss::{bce_loss, softmax, softmax_ce_loss};
pub use model::{
    build_model, count_parameters, Head, LayerSpec, Model, ModelKind, ModelOptions, ModelSpec,
    ParamCount, Shape, SummaryRow,
};
pub use tensor::{Matrix, SeqBatch, Tensor};

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Whether a forward pass updates batch statistics and keeps a backward cache.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// A trainable tensor and the gradient from the most recent backward pass.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Param {
    pub value: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(value: Vec<f64>) -> Self {
        Self {
            value,
            grad: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub(crate) fn set_grad(&mut self, grad: Vec<f64>) {
        debug_assert_eq!(grad.len(), self.value.len());
        self.grad = grad;
    }
}

/// Glorot-uniform samples in `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot_uniform<R: Rng + ?Sized>(
    n: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

/// Dot product with four interleaved accumulators, combined in a fixed order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail_a = ca.remainder();
    let tail_b = cb.remainder();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in tail_a.iter().zip(tail_b) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
