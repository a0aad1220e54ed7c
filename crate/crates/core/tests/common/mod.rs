//! Oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use bandnet::nn::{
    bce_loss, softmax_ce_loss, ActivationKind, ActivationLayer, BatchNorm, Conv1d, Dense, Layer, Matrix,
    MaxPool1d, Mode, SeqBatch, Tensor,
};
use bandnet::optim::{self, OptimizerConfig, OptimizerState, Rule};
use bandnet::signal::SAMPLE_RATE;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal draws away from zero, so ReLU kinks stay out of reach of
/// the finite-difference step.
pub fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v: f64 = rng.sample(rand_distr::StandardNormal);
            if v.abs() > 1e-3 {
                break v;
            }
        })
        .collect()
}

/// Distinct values at least 0.05 apart, in random order, so window maxima
/// are unique under perturbation.
pub fn spaced(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    use rand::seq::SliceRandom;
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - n as f64 * 0.05 + rng.random_range(0.0..0.01)).collect();
    v.shuffle(rng);
    v
}

pub fn with_data(t: &Tensor, data: Vec<f64>) -> Tensor {
    match t {
        Tensor::Flat(m) => Tensor::Flat(Matrix::new(m.rows(), m.cols(), data).unwrap()),
        Tensor::Seq(s) => Tensor::Seq(SeqBatch::new(s.batch(), s.channels(), s.len(), data).unwrap()),
    }
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn projected(layer: &Layer, input: &Tensor, r: &[f64]) -> f64 {
    let mut l = layer.clone();
    let out = l.forward(input, Mode::Train).unwrap();
    out.data().iter().zip(r).map(|(o, w)| o * w).sum()
}

/// Worst relative error between backward and central differences of
/// `L = sum(r * layer(x))`, over the input gradient and every parameter.
pub fn layer_grad_error(layer: &Layer, input: &Tensor, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut work = layer.clone();
    let out = work.forward(input, Mode::Train).unwrap();
    let r = normals(&mut rng, out.data().len());
    let input_grad = work.backward(&with_data(&out, r.clone())).unwrap();

    let mut numeric = Vec::with_capacity(input.data().len());
    for i in 0..input.data().len() {
        let mut plus = input.data().to_vec();
        let mut minus = plus.clone();
        plus[i] += FD_STEP;
        minus[i] -= FD_STEP;
        let fp = projected(layer, &with_data(input, plus), &r);
        let fm = projected(layer, &with_data(input, minus), &r);
        numeric.push((fp - fm) / (2.0 * FD_STEP));
    }
    let mut worst = rel_error(input_grad.data(), &numeric);

    let n_params = layer.params().len();
    for p in 0..n_params {
        let analytic = work.params()[p].grad.clone();
        let len = layer.params()[p].value.len();
        let mut numeric = Vec::with_capacity(len);
        for i in 0..len {
            let mut l = layer.clone();
            l.params_mut()[p].value[i] += FD_STEP;
            let fp = projected(&l, input, &r);
            l.params_mut()[p].value[i] -= 2.0 * FD_STEP;
            let fm = projected(&l, input, &r);
            numeric.push((fp - fm) / (2.0 * FD_STEP));
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

#[derive(Clone, Copy, Debug)]
pub enum LayerCase {
    Dense,
    DenseNoBias,
    BatchNorm,
    Conv1d,
    MaxPool1d,
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
}

impl LayerCase {
    pub const ALL: [LayerCase; 9] = [
        LayerCase::Dense,
        LayerCase::DenseNoBias,
        LayerCase::BatchNorm,
        LayerCase::Conv1d,
        LayerCase::MaxPool1d,
        LayerCase::Relu,
        LayerCase::LeakyRelu,
        LayerCase::Sigmoid,
        LayerCase::Tanh,
    ];
}

/// A random small instance: dims up to 8, batch up to 6 (at least 3 for batch norm).
pub fn random_case(case: LayerCase, seed: u64) -> (Layer, Tensor) {
    let mut rng = rng(seed);
    let batch = rng.random_range(2..=6);
    let flat = |rng: &mut ChaCha8Rng, cols: usize| {
        Tensor::Flat(Matrix::new(batch, cols, normals(rng, batch * cols)).unwrap())
    };
    match case {
        LayerCase::Dense | LayerCase::DenseNoBias => {
            let (i, o) = (rng.random_range(1..=8), rng.random_range(1..=8));
            let layer = Dense::new(i, o, matches!(case, LayerCase::Dense), &mut rng);
            let mut layer = Layer::Dense(layer);
            for p in layer.params_mut() {
                p.value = normals(&mut rng, p.value.len());
            }
            (layer, flat(&mut rng, i))
        }
        LayerCase::BatchNorm => {
            // Two rows normalise to +-1 whatever the input, leaving an input
            // gradient of order eps that finite differences cannot resolve.
            let batch = batch.max(3);
            let flat = |rng: &mut ChaCha8Rng, cols: usize| {
                Tensor::Flat(Matrix::new(batch, cols, normals(rng, batch * cols)).unwrap())
            };
            let d = rng.random_range(1..=8);
            let mut layer = Layer::BatchNorm(BatchNorm::new(d, 1e-5, 0.1).unwrap());
            for p in layer.params_mut() {
                p.value = normals(&mut rng, p.value.len());
            }
            (layer, flat(&mut rng, d))
        }
        LayerCase::Conv1d => {
            let (c_in, c_out) = (rng.random_range(1..=4), rng.random_range(1..=4));
            let k = rng.random_range(1..=4);
            let stride = rng.random_range(1..=2);
            let padding = rng.random_range(0..=2);
            let len = rng.random_range(k.max(2)..=8);
            let mut layer = Layer::Conv1d(Conv1d::new(c_in, c_out, k, stride, padding, &mut rng).unwrap());
            for p in layer.params_mut() {
                p.value = normals(&mut rng, p.value.len());
            }
            let x = SeqBatch::new(batch, c_in, len, normals(&mut rng, batch * c_in * len)).unwrap();
            (layer, Tensor::Seq(x))
        }
        LayerCase::MaxPool1d => {
            let (channels, len) = (rng.random_range(1..=3), rng.random_range(2..=8));
            let k = rng.random_range(1..=len.min(3));
            let stride = rng.random_range(1..=2);
            let layer = Layer::MaxPool1d(MaxPool1d::new(k, stride).unwrap());
            let x = SeqBatch::new(batch, channels, len, spaced(&mut rng, batch * channels * len)).unwrap();
            (layer, Tensor::Seq(x))
        }
        LayerCase::Relu | LayerCase::LeakyRelu | LayerCase::Sigmoid | LayerCase::Tanh => {
            let kind = match case {
                LayerCase::Relu => ActivationKind::Relu,
                LayerCase::LeakyRelu => ActivationKind::LeakyRelu(rng.random_range(0.01..0.5)),
                LayerCase::Sigmoid => ActivationKind::Sigmoid,
                _ => ActivationKind::Tanh,
            };
            let cols = rng.random_range(1..=8);
            (Layer::Activation(ActivationLayer::new(kind).unwrap()), flat(&mut rng, cols))
        }
    }
}

/// Relative error of the BCE gradient on a random batch.
pub fn bce_grad_error(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=6);
    let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
    let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
    let (_, grad) = bce_loss(&p, &y).unwrap();
    let numeric: Vec<f64> = (0..n)
        .map(|i| {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[i] += FD_STEP;
            b[i] -= FD_STEP;
            (bce_loss(&a, &y).unwrap().0 - bce_loss(&b, &y).unwrap().0) / (2.0 * FD_STEP)
        })
        .collect();
    rel_error(&grad, &numeric)
}

/// Relative error of the softmax cross-entropy gradient on random logits.
pub fn softmax_ce_grad_error(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=6);
    let logits = normals(&mut rng, 2 * n);
    let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
    let x = Matrix::new(n, 2, logits.clone()).unwrap();
    let (_, grad) = softmax_ce_loss(&x, &y).unwrap();
    let numeric: Vec<f64> = (0..2 * n)
        .map(|i| {
            let (mut a, mut b) = (logits.clone(), logits.clone());
            a[i] += FD_STEP;
            b[i] -= FD_STEP;
            let fa = softmax_ce_loss(&Matrix::new(n, 2, a).unwrap(), &y).unwrap().0;
            let fb = softmax_ce_loss(&Matrix::new(n, 2, b).unwrap(), &y).unwrap().0;
            (fa - fb) / (2.0 * FD_STEP)
        })
        .collect();
    rel_error(grad.data(), &numeric)
}

/// Positive-negative pairs ranked correctly, ties counting one half.
pub fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if si > sj {
                    num += 1.0;
                } else if si == sj {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

/// Scalar transcription of each rule on `L = w^2 / 2` (so `g = w`), written
/// from the update formulas without reference to the library code.
pub fn optimizer_oracle(rule: Rule, lr: f64, w0: f64, steps: usize) -> Vec<f64> {
    let (b1, b2) = (0.9f64, 0.999f64);
    let mut w = w0;
    let (mut a, mut b) = (0.0f64, 0.0f64);
    let mut out = Vec::new();
    for t in 1..=steps as i32 {
        let g = w;
        match rule {
            Rule::Sgd => w -= lr * g,
            Rule::Adagrad => {
                a += g * g;
                w -= lr * g / (a.sqrt() + 1e-10);
            }
            Rule::Rmsprop => {
                a = 0.9 * a + 0.1 * g * g;
                w -= lr * g / (a.sqrt() + 1e-8);
            }
            Rule::Adadelta => {
                a = 0.95 * a + 0.05 * g * g;
                let dw = -((b + 1e-6).sqrt() / (a + 1e-6).sqrt()) * g;
                b = 0.95 * b + 0.05 * dw * dw;
                w += lr * dw;
            }
            Rule::Adam => {
                a = b1 * a + (1.0 - b1) * g;
                b = b2 * b + (1.0 - b2) * g * g;
                let mh = a / (1.0 - b1.powi(t));
                let vh = b / (1.0 - b2.powi(t));
                w -= lr * mh / (vh.sqrt() + 1e-8);
            }
            Rule::Adamax => {
                a = b1 * a + (1.0 - b1) * g;
                b = (b2 * b).max(g.abs());
                w -= lr / (1.0 - b1.powi(t)) * a / (b + 1e-8);
            }
            Rule::Nadam => {
                a = b1 * a + (1.0 - b1) * g;
                b = b2 * b + (1.0 - b2) * g * g;
                let mh = a / (1.0 - b1.powi(t));
                let vh = b / (1.0 - b2.powi(t));
                w -= lr * (b1 * mh + (1.0 - b1) * g / (1.0 - b1.powi(t))) / (vh.sqrt() + 1e-8);
            }
            Rule::Ftrl => {
                // a = z, b = n; l1 = l2 = 0, beta = 1.
                if g != 0.0 {
                    let sigma = ((b + g * g).sqrt() - b.sqrt()) / lr;
                    a += g - sigma * w;
                    b += g * g;
                    w = -a / ((1.0 + b.sqrt()) / lr);
                }
            }
        }
        out.push(w);
    }
    out
}

pub fn optimizer_library(rule: Rule, lr: f64, w0: f64, steps: usize) -> Vec<f64> {
    let config = OptimizerConfig::new(rule, lr);
    let mut state = OptimizerState::new(rule, 1);
    let mut w = [w0];
    (0..steps)
        .map(|_| {
            let g = [w[0]];
            optim::step(&mut w, &g, &mut state, &config).unwrap();
            w[0]
        })
        .collect()
}

/// A random `d -> 6 -> 1` tanh network as a value function.
pub fn random_net(seed: u64, d: usize) -> impl Fn(&Matrix) -> bandnet::Result<Vec<f64>> + Sync {
    let mut rng = rng(seed);
    let w1: Vec<f64> = (0..6 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b1: Vec<f64> = (0..6).map(|_| rng.random_range(-0.5..0.5)).collect();
    let w2: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    move |m: &Matrix| {
        Ok((0..m.rows())
            .map(|r| {
                let x = m.row(r);
                (0..6)
                    .map(|h| w2[h] * (b1[h] + (0..d).map(|i| w1[h * d + i] * x[i]).sum::<f64>()).tanh())
                    .sum()
            })
            .collect())
    }
}

pub fn random_rows(seed: u64, rows: usize, d: usize) -> Matrix {
    let mut rng = rng(seed);
    Matrix::new(rows, d, (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Power spectrum `|X_k|^2 / n^2` per bin, with frequencies.
pub fn spectrum(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.iter()
        .enumerate()
        .map(|(k, c)| {
            let f = if k <= n / 2 { k as f64 } else { n as f64 - k as f64 } * SAMPLE_RATE / n as f64;
            (f, c.norm_sqr() / (n * n) as f64)
        })
        .collect()
}

pub fn band_power(x: &[f64], lo: f64, hi: f64) -> f64 {
    spectrum(x).iter().filter(|(f, _)| *f >= lo && *f <= hi).map(|(_, p)| p).sum()
}

pub fn total_power(x: &[f64]) -> f64 {
    spectrum(x).iter().map(|(_, p)| p).sum()
}
