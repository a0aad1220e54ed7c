use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{axpy, dot, glorot_uniform, Matrix, Param};
use crate::{par, Error, Result};

/// Fully connected layer computing `z = W·a + b` for every row of the batch.
///
/// `weight` is stored row-major with shape `(out_features, in_features)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dense {
    in_features: usize,
    out_features: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    #[serde(skip)]
    cache: Option<Matrix>,
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub input: Matrix,
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        in_features: usize,
        out_features: usize,
        use_bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = glorot_uniform(in_features * out_features, in_features, out_features, rng);
        Self {
            in_features,
            out_features,
            weight: Param::new(weight),
            bias: use_bias.then(|| Param::new(vec![0.0; out_features])),
            cache: None,
        }
    }

    /// Builds a layer from explicit weights (`out x in`) and an optional bias.
    pub fn from_weights(weight: Matrix, bias: Option<Vec<f64>>) -> Result<Self> {
        let (out_features, in_features) = (weight.rows(), weight.cols());
        if let Some(b) = &bias {
            if b.len() != out_features {
                return Err(Error::dim(format!(
                    "bias has {} entries for {out_features} outputs",
                    b.len()
                )));
            }
        }
        Ok(Self {
            in_features,
            out_features,
            weight: Param::new(weight.into_data()),
            bias: bias.map(Param::new),
            cache: None,
        })
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn param_count(&self) -> usize {
        self.out_features * self.in_features + if self.bias.is_some() { self.out_features } else { 0 }
    }

    pub fn forward(&mut self, input: &Matrix) -> Result<Matrix> {
        let out = self.infer(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    /// Forward pass without touching the backward cache.
    pub fn infer(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.in_features {
            return Err(Error::dim(format!(
                "dense layer expects {} features, got {}",
                self.in_features,
                input.cols()
            )));
        }
        let (n_in, n_out) = (self.in_features, self.out_features);
        let w = &self.weight.value;
        let bias = self.bias.as_ref().map(|b| b.value.as_slice());
        let mut out = vec![0.0; input.rows() * n_out];
        par::for_each_chunk_mut(&mut out, n_out, |r, row| {
            let x = input.row(r);
            for (o, z) in row.iter_mut().enumerate() {
                *z = dot(&w[o * n_in..(o + 1) * n_in], x) + bias.map_or(0.0, |b| b[o]);
            }
        });
        Ok(Matrix::from_parts(input.rows(), n_out, out))
    }

    /// Gradients of the batch-summed loss given `upstream = dL/dz`.
    pub fn backward(&self, upstream: &Matrix) -> Result<DenseGrads> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("dense backward called before forward".into()))?;
        if upstream.cols() != self.out_features || upstream.rows() != input.rows() {
            return Err(Error::dim(format!(
                "dense upstream gradient is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                input.rows(),
                self.out_features
            )));
        }
        let (n_in, n_out, batch) = (self.in_features, self.out_features, input.rows());
        let w = &self.weight.value;

        let mut input_grad = vec![0.0; batch * n_in];
        par::for_each_chunk_mut(&mut input_grad, n_in, |r, gx| {
            for (o, &g) in upstream.row(r).iter().enumerate() {
                axpy(g, &w[o * n_in..(o + 1) * n_in], gx);
            }
        });

        let mut weight_grad = vec![0.0; n_out * n_in];
        par::for_each_chunk_mut(&mut weight_grad, n_in, |o, gw| {
            for r in 0..batch {
                axpy(upstream.get(r, o), input.row(r), gw);
            }
        });

        let bias_grad = self
            .bias
            .as_ref()
            .map(|_| (0..n_out).map(|o| (0..batch).map(|r| upstream.get(r, o)).sum()).collect());

        Ok(DenseGrads {
            input: Matrix::from_parts(batch, n_in, input_grad),
            weight: weight_grad,
            bias: bias_grad,
        })
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}
