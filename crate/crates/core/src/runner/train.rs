//! Mini-batch training with early stopping, and evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{self, ConfusionCounts, EfficientClassReport, MetricsReport, DEFAULT_THRESHOLD};
use crate::nn::{bce_loss, softmax_ce_loss, Head, Matrix, Mode, Model};
use crate::optim::Optimizer;
use crate::signal::{LabeledExample, SplitDataset};
use crate::{Error, Result};

/// Rows scored per forward pass outside training.
const INFER_ROWS: usize = 128;

/// Features and labels of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledMatrix {
    pub x: Matrix,
    pub y: Vec<u8>,
}

impl LabeledMatrix {
    pub fn new(x: Matrix, y: Vec<u8>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::dim(format!("{} rows for {} labels", x.rows(), y.len())));
        }
        Ok(Self { x, y })
    }

    pub fn from_examples(examples: &[LabeledExample]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::invalid("split is empty"));
        }
        let rows: Vec<&[f64]> = examples.iter().map(|e| e.features.as_slice()).collect();
        let x = Matrix::from_rows(&rows)?;
        Self::new(x, examples.iter().map(|e| e.label).collect())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSplits {
    pub train: LabeledMatrix,
    pub val: LabeledMatrix,
    pub test: LabeledMatrix,
}

impl DataSplits {
    pub fn from_split(split: &SplitDataset) -> Result<Self> {
        Ok(Self {
            train: LabeledMatrix::from_examples(&split.train)?,
            val: LabeledMatrix::from_examples(&split.val)?,
            test: LabeledMatrix::from_examples(&split.test)?,
        })
    }

    pub fn feature_len(&self) -> usize {
        self.train.x.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Smallest val-loss drop that resets the patience counter.
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 150,
            patience: 10,
            min_delta: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Epoch (1-based) whose weights the model holds after training.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainOutcome {
    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }

    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_accuracy\n");
        for r in &self.history {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.val_accuracy));
        }
        out
    }
}

/// Loss for the model's head and its gradient with respect to the output.
pub fn head_loss(head: Head, output: &Matrix, labels: &[u8]) -> Result<(f64, Matrix)> {
    match head {
        Head::Probability => {
            let (loss, grad) = bce_loss(&output.column(0), labels)?;
            Ok((loss, Matrix::new(grad.len(), 1, grad)?))
        }
        Head::Logits => softmax_ce_loss(output, labels),
    }
}

/// Class-1 scores in row chunks, so large inputs never need one huge batch.
pub fn predict_scores(model: &Model, x: &Matrix) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..x.rows()).collect();
    let mut out = Vec::with_capacity(x.rows());
    for chunk in idx.chunks(INFER_ROWS) {
        if chunk.len() == x.rows() {
            return model.scores(x);
        }
        out.extend(model.scores(&x.select_rows(chunk))?);
    }
    Ok(out)
}

fn inference_loss(model: &Model, data: &LabeledMatrix) -> Result<(f64, f64)> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (mut total, mut correct) = (0.0, 0usize);
    for chunk in idx.chunks(INFER_ROWS) {
        let part = data.select(chunk);
        let out = model.predict(&part.x)?;
        let (loss, _) = head_loss(model.head(), &out, &part.y)?;
        total += loss * chunk.len() as f64;
        let scores = match model.head() {
            Head::Probability => out.column(0),
            Head::Logits => crate::nn::softmax(&out).column(1),
        };
        correct += scores
            .iter()
            .zip(&part.y)
            .filter(|(s, y)| u8::from(**s >= DEFAULT_THRESHOLD) == **y)
            .count();
    }
    Ok((total / data.len() as f64, correct as f64 / data.len() as f64))
}

/// Shuffled batches; a trailing single example joins the previous batch so
/// batch normalization always sees at least two rows.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("at least one batch remains") = &order[start..];
    }
    out
}

/// Trains until the validation loss stalls for `patience` epochs or
/// `max_epochs` is reached, then restores the lowest-val-loss weights.
pub fn train(
    model: &mut Model,
    optimizer: &mut Optimizer,
    splits: &DataSplits,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(Error::invalid("training needs non-empty train and val splits"));
    }
    if config.batch_size == 0 || config.max_epochs == 0 || config.patience == 0 {
        return Err(Error::invalid("batch_size, max_epochs and patience must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.state());
    let mut reference = f64::INFINITY;
    let mut stalled = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in batches(&order, config.batch_size).into_iter().enumerate() {
            let batch = splits.train.select(idx);
            let out = model.forward(&batch.x, Mode::Train)?;
            let (loss, grad) = head_loss(model.head(), &out, &batch.y)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became {loss} at epoch {epoch}, batch {} (rows {})",
                    b + 1,
                    idx.len()
                )));
            }
            total += loss * idx.len() as f64;
            model.backward(&grad)?;
            optimizer.step(model.params_mut())?;
        }
        model.clear_caches();
        let train_loss = total / splits.train.len() as f64;
        let (val_loss, val_accuracy) = inference_loss(model, &splits.val)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("validation loss became {val_loss} at epoch {epoch}")));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        log::debug!("epoch {epoch}: train loss {train_loss:.6}, val loss {val_loss:.6}, val acc {val_accuracy:.4}");
        if val_loss < best.0 {
            best = (val_loss, epoch, model.state());
        }
        if val_loss < reference - config.min_delta {
            reference = val_loss;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= config.patience {
                break;
            }
        }
    }
    let (best_val_loss, best_epoch, state) = best;
    model.load_state(&state)?;
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_loss,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub counts: ConfusionCounts,
    pub efficient: EfficientClassReport,
    pub scores: Vec<f64>,
    pub inference_s: f64,
}

/// One inference pass over `data` at the 0.5 threshold.
pub fn evaluate(model: &Model, data: &LabeledMatrix) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty split"));
    }
    let start = Instant::now();
    let scores = predict_scores(model, &data.x)?;
    let inference_s = start.elapsed().as_secs_f64();
    let counts = metrics::confusion(&scores, &data.y, DEFAULT_THRESHOLD)?;
    let report = metrics::report(&counts, &scores, &data.y)?;
    Ok(Evaluation {
        report,
        counts,
        efficient: metrics::efficient_class(&counts),
        scores,
        inference_s,
    })
}
