use serde::{Deserialize, Serialize};

use super::{Matrix, Mode, Param};
use crate::{Error, Result};

/// Per-feature batch normalization with learnable scale and shift.
///
/// Training mode normalizes with the batch mean and population variance and
/// folds both into the running statistics:
/// `running <- (1 - momentum) * running + momentum * batch_stat`.
/// Inference mode normalizes with the running statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BatchNorm {
    features: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    epsilon: f64,
    momentum: f64,
    #[serde(skip)]
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
struct BnCache {
    mode: Mode,
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    rows: usize,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads {
    pub input: Matrix,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BatchNorm {
    pub fn new(features: usize, epsilon: f64, momentum: f64) -> Result<Self> {
        if features == 0 {
            return Err(Error::invalid("batch norm needs at least one feature"));
        }
        if !(epsilon > 0.0) {
            return Err(Error::invalid(format!("batch norm epsilon must be positive, got {epsilon}")));
        }
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::invalid(format!("batch norm momentum must be in (0,1), got {momentum}")));
        }
        Ok(Self {
            features,
            gamma: Param::new(vec![1.0; features]),
            beta: Param::new(vec![0.0; features]),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            epsilon,
            momentum,
            cache: None,
        })
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn trainable_count(&self) -> usize {
        2 * self.features
    }

    pub fn non_trainable_count(&self) -> usize {
        2 * self.features
    }

    pub fn forward(&mut self, input: &Matrix, mode: Mode) -> Result<Matrix> {
        let d = self.check_cols(input)?;
        let n = input.rows();
        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::DegenerateBatch(n));
                }
                let (mean, var) = batch_moments(input);
                let m = self.momentum;
                for j in 0..d {
                    self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * mean[j];
                    self.running_var[j] = (1.0 - m) * self.running_var[j] + m * var[j];
                }
                (mean, var)
            }
            Mode::Infer => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let mut x_hat = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let x = input.row(r);
            for j in 0..d {
                let h = (x[j] - mean[j]) * inv_std[j];
                x_hat[r * d + j] = h;
                out[r * d + j] = self.gamma.value[j] * h + self.beta.value[j];
            }
        }
        self.cache = Some(BnCache {
            mode,
            x_hat,
            inv_std,
            rows: n,
        });
        Ok(Matrix::from_parts(n, d, out))
    }

    /// Inference-mode forward without touching the cache.
    pub fn infer(&self, input: &Matrix) -> Result<Matrix> {
        let d = self.check_cols(input)?;
        let mut out = input.clone();
        for row in out.data_mut().chunks_mut(d) {
            for (j, x) in row.iter_mut().enumerate() {
                let h = (*x - self.running_mean[j]) / (self.running_var[j] + self.epsilon).sqrt();
                *x = self.gamma.value[j] * h + self.beta.value[j];
            }
        }
        Ok(out)
    }

    /// Exact gradient through the batch mean and variance.
    pub fn backward(&self, upstream: &Matrix) -> Result<BatchNormGrads> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("batch norm backward called before forward".into()))?;
        if cache.mode != Mode::Train {
            return Err(Error::State(
                "batch norm backward needs a training-mode forward".into(),
            ));
        }
        let (n, d) = (cache.rows, self.features);
        if upstream.rows() != n || upstream.cols() != d {
            return Err(Error::dim(format!(
                "batch norm upstream is {}x{}, expected {n}x{d}",
                upstream.rows(),
                upstream.cols()
            )));
        }
        let up = upstream.data();
        let mut gamma_grad = vec![0.0; d];
        let mut beta_grad = vec![0.0; d];
        for r in 0..n {
            for j in 0..d {
                beta_grad[j] += up[r * d + j];
                gamma_grad[j] += up[r * d + j] * cache.x_hat[r * d + j];
            }
        }
        // dx = inv_std / n * (n * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat)), dxhat = up * gamma
        let nf = n as f64;
        let mut input_grad = vec![0.0; n * d];
        for j in 0..d {
            let g = self.gamma.value[j];
            let sum_dxhat = g * beta_grad[j];
            let sum_dxhat_xhat = g * gamma_grad[j];
            let scale = cache.inv_std[j] / nf;
            for r in 0..n {
                let k = r * d + j;
                input_grad[k] =
                    scale * (nf * g * up[k] - sum_dxhat - cache.x_hat[k] * sum_dxhat_xhat);
            }
        }
        Ok(BatchNormGrads {
            input: Matrix::from_parts(n, d, input_grad),
            gamma: gamma_grad,
            beta: beta_grad,
        })
    }

    fn check_cols(&self, input: &Matrix) -> Result<usize> {
        if input.cols() != self.features {
            return Err(Error::dim(format!(
                "batch norm expects {} features, got {}",
                self.features,
                input.cols()
            )));
        }
        Ok(self.features)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Per-column mean and population variance.
fn batch_moments(input: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (input.rows() as f64, input.cols());
    let mut mean = vec![0.0; d];
    for r in 0..input.rows() {
        for (m, x) in mean.iter_mut().zip(input.row(r)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in 0..input.rows() {
        for j in 0..d {
            let c = input.get(r, j) - mean[j];
            var[j] += c * c;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64]) -> Matrix {
        Matrix::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn normalizes_one_two_three() {
        let mut bn = BatchNorm::new(1, 1e-12, 0.1).unwrap();
        let out = bn.forward(&column(&[1.0, 2.0, 3.0]), Mode::Train).unwrap();
        let expected = [-1.224744871391589, 0.0, 1.224744871391589];
        for (o, e) in out.data().iter().zip(expected) {
            assert!((o - e).abs() < 1e-9, "{o} vs {e}");
        }
    }

    #[test]
    fn affine_on_top_of_normalization() {
        let mut bn = BatchNorm::new(1, 1e-12, 0.1).unwrap();
        bn.gamma.value[0] = 2.0;
        bn.beta.value[0] = 1.0;
        let out = bn.forward(&column(&[1.0, 2.0, 3.0]), Mode::Train).unwrap();
        let expected = [-1.449489742783178, 1.0, 3.449489742783178];
        for (o, e) in out.data().iter().zip(expected) {
            assert!((o - e).abs() < 1e-9, "{o} vs {e}");
        }
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let mut bn = BatchNorm::new(1, 1e-5, 0.1).unwrap();
        let out = bn.forward(&column(&[4.0; 5]), Mode::Train).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm::new(1, 1e-5, 0.1).unwrap();
        bn.forward(&column(&[1.0, 2.0, 3.0]), Mode::Train).unwrap();
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_and_state_errors() {
        let mut bn = BatchNorm::new(1, 1e-5, 0.1).unwrap();
        assert!(matches!(bn.forward(&column(&[1.0]), Mode::Train), Err(Error::DegenerateBatch(1))));
        bn.forward(&column(&[1.0, 2.0]), Mode::Infer).unwrap();
        assert!(matches!(bn.backward(&column(&[1.0, 1.0])), Err(Error::State(_))));
    }

    #[test]
    fn common_mode_upstream_has_no_input_gradient() {
        let mut bn = BatchNorm::new(2, 1e-5, 0.1).unwrap();
        let x = Matrix::from_rows(&[[0.3, 1.0], [-1.2, 2.0], [0.7, 5.0], [2.0, -1.0]]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        let up = Matrix::from_rows(&[[1.5, -2.0]; 4]).unwrap();
        let g = bn.backward(&up).unwrap();
        assert!(g.input.data().iter().all(|v| v.abs() < 1e-12));
        assert_eq!(g.beta, vec![6.0, -8.0]);
    }
}
