//! Confusion-matrix metrics, ROC analysis and the efficient-class rule.
//!
//! Class 1 (right hemisphere) is the positive class. A score at or above
//! the threshold predicts class 1.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_pair(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::invalid("no examples to score"));
    }
    if let Some(y) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::invalid(format!("label {y} is not 0 or 1")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    Ok(())
}

pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    check_pair(scores, labels)?;
    let mut c = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Metrics whose denominator was zero; each is reported as 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degenerate {
    pub precision: bool,
    pub recall: bool,
    pub specificity: bool,
    pub f1: bool,
    pub roc_auc: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.specificity || self.f1 || self.roc_auc
    }

    pub fn names(&self) -> Vec<&'static str> {
        [
            (self.precision, "precision"),
            (self.recall, "recall"),
            (self.specificity, "specificity"),
            (self.f1, "f1"),
            (self.roc_auc, "roc_auc"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub roc_auc: f64,
    pub degenerate: Degenerate,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Threshold metrics from `counts` plus ROC AUC from the raw scores.
///
/// A single-class label set has no ROC AUC; it is reported as 0 and flagged.
pub fn report(counts: &ConfusionCounts, scores: &[f64], labels: &[u8]) -> Result<MetricsReport> {
    let ConfusionCounts { tp, fp, tn, fn_ } = *counts;
    let (precision, dp) = ratio(tp, tp + fp);
    let (recall, dr) = ratio(tp, tp + fn_);
    let (specificity, ds) = ratio(tn, tn + fp);
    let (f1, df) = if precision + recall > 0.0 {
        (2.0 * precision * recall / (precision + recall), false)
    } else {
        (0.0, true)
    };
    let (accuracy, _) = ratio(tp + tn, counts.total());
    let (roc_auc, da) = match roc_auc(scores, labels) {
        Ok(a) => (a, false),
        Err(Error::Validation(_)) if !scores.is_empty() && scores.len() == labels.len() => (0.0, true),
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        precision,
        recall,
        specificity,
        f1,
        accuracy,
        roc_auc,
        degenerate: Degenerate {
            precision: dp,
            recall: dr,
            specificity: ds,
            f1: df,
            roc_auc: da,
        },
    })
}

fn class_totals(labels: &[u8]) -> Result<(u64, u64)> {
    let pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("ROC analysis needs both classes present"));
    }
    Ok((pos, neg))
}

/// Indices sorted by ascending score, with total order on floats.
fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Area under the ROC curve as the Mann-Whitney statistic: the chance a
/// random positive outscores a random negative, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_pair(scores, labels)?;
    let (pos, neg) = class_totals(labels)?;
    let idx = ascending(scores);
    // Count in half-units so the numerator stays an exact integer.
    let mut half_units: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        let (mut p, mut n) = (0u64, 0u64);
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] == 1 {
                p += 1;
            } else {
                n += 1;
            }
            i += 1;
        }
        half_units += 2 * p * neg_below + p * n;
        neg_below += n;
    }
    Ok(half_units as f64 / (2 * pos * neg) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points from `(0,0)` to `(1,1)`, one per distinct score threshold.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    check_pair(scores, labels)?;
    let (pos, neg) = class_totals(labels)?;
    let mut idx = ascending(scores);
    idx.reverse();
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a curve from [`roc_curve`].
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Two-column `fpr,tpr` text for plotting.
pub fn roc_to_text(points: &[RocPoint]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.fpr, p.tpr));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hemisphere {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

impl fmt::Display for Hemisphere {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hemisphere::Left => "L",
            Hemisphere::Right => "R",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficientClassReport {
    pub efficient: Hemisphere,
    pub left_recall: f64,
    pub right_recall: f64,
}

/// The hemisphere with the larger per-class recall; left wins ties.
pub fn efficient_class(counts: &ConfusionCounts) -> EfficientClassReport {
    let (right_recall, _) = ratio(counts.tp, counts.tp + counts.fn_);
    let (left_recall, _) = ratio(counts.tn, counts.tn + counts.fp);
    EfficientClassReport {
        efficient: if right_recall > left_recall {
            Hemisphere::Right
        } else {
            Hemisphere::Left
        },
        left_recall,
        right_recall,
    }
}
