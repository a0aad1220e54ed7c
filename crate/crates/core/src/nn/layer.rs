use serde::{Deserialize, Serialize};

use super::{ActivationLayer, BatchNorm, Conv1d, Dense, MaxPool1d, Matrix, Mode, Param, SeqBatch, Tensor};
use crate::{Error, Result};

/// One stage of a [`super::Model`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Layer {
    Dense(Dense),
    BatchNorm(BatchNorm),
    Conv1d(Conv1d),
    MaxPool1d(MaxPool1d),
    Activation(ActivationLayer),
    /// `(batch, channels, len)` to `(batch, channels * len)`.
    Flatten {
        #[serde(skip)]
        cached: Option<(usize, usize)>,
    },
}

impl Layer {
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(match self {
            Layer::Dense(l) => l.forward(input.as_flat("dense")?)?.into(),
            Layer::BatchNorm(l) => l.forward(input.as_flat("batch norm")?, mode)?.into(),
            Layer::Conv1d(l) => l.forward(input.as_seq("conv1d")?)?.into(),
            Layer::MaxPool1d(l) => l.forward(input.as_seq("max pool")?)?.into(),
            Layer::Activation(l) => l.forward(input),
            Layer::Flatten { cached } => {
                let s = input.as_seq("flatten")?;
                *cached = Some((s.channels(), s.len()));
                flatten(s)
            }
        })
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        Ok(match self {
            Layer::Dense(l) => l.infer(input.as_flat("dense")?)?.into(),
            Layer::BatchNorm(l) => l.infer(input.as_flat("batch norm")?)?.into(),
            Layer::Conv1d(l) => l.infer(input.as_seq("conv1d")?)?.into(),
            Layer::MaxPool1d(l) => l.infer(input.as_seq("max pool")?)?.into(),
            Layer::Activation(l) => l.infer(input),
            Layer::Flatten { .. } => flatten(input.as_seq("flatten")?),
        })
    }

    /// Propagates `upstream` and stores parameter gradients in place.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        Ok(match self {
            Layer::Dense(l) => {
                let g = l.backward(upstream.as_flat("dense")?)?;
                l.weight.set_grad(g.weight);
                if let (Some(b), Some(gb)) = (l.bias.as_mut(), g.bias) {
                    b.set_grad(gb);
                }
                g.input.into()
            }
            Layer::BatchNorm(l) => {
                let g = l.backward(upstream.as_flat("batch norm")?)?;
                l.gamma.set_grad(g.gamma);
                l.beta.set_grad(g.beta);
                g.input.into()
            }
            Layer::Conv1d(l) => {
                let g = l.backward(upstream.as_seq("conv1d")?)?;
                l.kernel.set_grad(g.kernel);
                l.bias.set_grad(g.bias);
                g.input.into()
            }
            Layer::MaxPool1d(l) => l.backward(upstream.as_seq("max pool")?)?.into(),
            Layer::Activation(l) => l.backward(upstream)?,
            Layer::Flatten { cached } => {
                let (channels, len) =
                    cached.ok_or_else(|| Error::State("flatten backward called before forward".into()))?;
                let m = upstream.as_flat("flatten backward")?;
                if m.cols() != channels * len {
                    return Err(Error::dim("flatten upstream width does not match cached shape"));
                }
                SeqBatch::from_parts(m.rows(), channels, len, m.data().to_vec()).into()
            }
        })
    }

    /// Trainable tensors in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Dense(l) => {
                let mut v = vec![&mut l.weight];
                if let Some(b) = l.bias.as_mut() {
                    v.push(b);
                }
                v
            }
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Conv1d(l) => vec![&mut l.kernel, &mut l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Dense(l) => std::iter::once(&l.weight).chain(l.bias.as_ref()).collect(),
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            Layer::Conv1d(l) => vec![&l.kernel, &l.bias],
            _ => Vec::new(),
        }
    }

    /// Buffers that change during training but are not optimized.
    pub(crate) fn buffers(&self) -> Vec<&Vec<f64>> {
        match self {
            Layer::BatchNorm(l) => vec![&l.running_mean, &l.running_var],
            _ => Vec::new(),
        }
    }

    /// Parameter values followed by buffers, matching `params` then `buffers`.
    pub(crate) fn state_slots_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Dense(l) => std::iter::once(&mut l.weight.value)
                .chain(l.bias.as_mut().map(|b| &mut b.value))
                .collect(),
            Layer::BatchNorm(l) => vec![
                &mut l.gamma.value,
                &mut l.beta.value,
                &mut l.running_mean,
                &mut l.running_var,
            ],
            Layer::Conv1d(l) => vec![&mut l.kernel.value, &mut l.bias.value],
            _ => Vec::new(),
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        match self {
            Layer::Dense(l) => l.clear_cache(),
            Layer::BatchNorm(l) => l.clear_cache(),
            Layer::Conv1d(l) => l.clear_cache(),
            Layer::MaxPool1d(l) => l.clear_cache(),
            Layer::Activation(l) => l.clear_cache(),
            Layer::Flatten { cached } => *cached = None,
        }
    }
}

fn flatten(s: &SeqBatch) -> Tensor {
    Matrix::from_parts(s.batch(), s.channels() * s.len(), s.data().to_vec()).into()
}
