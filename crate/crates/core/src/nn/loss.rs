use super::Matrix;
use crate::{Error, Result};

const PROB_FLOOR: f64 = 1e-7;

fn check_labels(labels: &[u8]) -> Result<()> {
    match labels.iter().find(|&&y| y > 1) {
        Some(y) => Err(Error::invalid(format!("label {y} is not 0 or 1"))),
        None => Ok(()),
    }
}

/// Mean binary cross-entropy and its gradient with respect to the probabilities.
///
/// Probabilities are clamped to `[1e-7, 1 - 1e-7]` before the logarithm.
pub fn bce_loss(probabilities: &[f64], labels: &[u8]) -> Result<(f64, Vec<f64>)> {
    if probabilities.len() != labels.len() || labels.is_empty() {
        return Err(Error::dim(format!(
            "{} probabilities for {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    check_labels(labels)?;
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(labels.len());
    for (&p, &y) in probabilities.iter().zip(labels) {
        let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        let y = f64::from(y);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push((p - y) / (p * (1.0 - p)) / n);
    }
    Ok((loss / n, grad))
}

/// Row-wise softmax, stabilised by subtracting the row maximum.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    let cols = logits.cols();
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean two-class cross-entropy on logits; gradient is `(softmax - onehot) / n`.
pub fn softmax_ce_loss(logits: &Matrix, labels: &[u8]) -> Result<(f64, Matrix)> {
    if logits.cols() != 2 {
        return Err(Error::dim(format!("expected 2 logits per example, got {}", logits.cols())));
    }
    if logits.rows() != labels.len() {
        return Err(Error::dim(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    check_labels(labels)?;
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = softmax(logits);
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row[0].max(row[1]);
        let lse = max + ((row[0] - max).exp() + (row[1] - max).exp()).ln();
        loss += lse - row[y as usize];
        grad.data_mut()[r * 2 + y as usize] -= 1.0;
    }
    grad.data_mut().iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}
