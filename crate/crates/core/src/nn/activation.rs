use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActivationKind {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

impl ActivationKind {
    pub fn validate(self) -> Result<Self> {
        match self {
            ActivationKind::LeakyRelu(s) if !(s > 0.0 && s < 1.0) => Err(Error::invalid(format!(
                "leaky ReLU slope must be in (0,1), got {s}"
            ))),
            k => Ok(k),
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::LeakyRelu(s) => {
                if x >= 0.0 {
                    x
                } else {
                    s * x
                }
            }
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation `x` and the output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu(s) => {
                if x >= 0.0 {
                    1.0
                } else {
                    s
                }
            }
            ActivationKind::Sigmoid => y * (1.0 - y),
            ActivationKind::Tanh => 1.0 - y * y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu(_) => "leaky_relu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation_apply(kind: ActivationKind, input: &[f64]) -> Vec<f64> {
    input.iter().map(|&x| kind.apply(x)).collect()
}

pub fn activation_backward(
    kind: ActivationKind,
    input: &[f64],
    output: &[f64],
    upstream: &[f64],
) -> Result<Vec<f64>> {
    if input.len() != upstream.len() || output.len() != upstream.len() {
        return Err(Error::dim("activation upstream does not match cached input"));
    }
    Ok(input
        .iter()
        .zip(output)
        .zip(upstream)
        .map(|((&x, &y), &g)| g * kind.derivative(x, y))
        .collect())
}

/// Elementwise activation as a layer, for flat or sequence batches.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ActivationLayer {
    pub kind: ActivationKind,
    #[serde(skip)]
    cache: Option<(Vec<f64>, Vec<f64>)>,
}

impl ActivationLayer {
    pub fn new(kind: ActivationKind) -> Result<Self> {
        Ok(Self {
            kind: kind.validate()?,
            cache: None,
        })
    }

    pub fn forward(&mut self, input: &Tensor) -> Tensor {
        let out = activation_apply(self.kind, input.data());
        self.cache = Some((input.data().to_vec(), out.clone()));
        input.same_shape_with(out)
    }

    pub fn infer(&self, input: &Tensor) -> Tensor {
        input.same_shape_with(activation_apply(self.kind, input.data()))
    }

    pub fn backward(&self, upstream: &Tensor) -> Result<Tensor> {
        let (x, y) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("activation backward called before forward".into()))?;
        let g = activation_backward(self.kind, x, y, upstream.data())?;
        Ok(upstream.same_shape_with(g))
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}
