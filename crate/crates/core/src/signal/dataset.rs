//! Turning recordings into labeled examples and splitting them.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::filter::{design_bandpass, Band, DEFAULT_FILTER_ORDER};
use super::recording::{label_channel, Dataset, Intensity, RawRecording};
use crate::{par, Error, Result};

/// Split shares in train, val, test order.
pub const SPLIT_SHARES: [f64; 3] = [0.70, 0.15, 0.15];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub dataset: Dataset,
    pub participant: u32,
    pub intensity: Intensity,
    pub channel: String,
    pub band: Band,
}

/// One filtered channel and its hemisphere label (0 left, 1 right).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: u8,
    pub meta: ExampleMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Vec<LabeledExample>,
    pub val: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub seed: u64,
}

impl SplitDataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    /// Feature length shared by all examples, if any.
    pub fn feature_len(&self) -> Option<usize> {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .next()
            .map(|e| e.features.len())
    }
}

/// One example per (recording, channel), filtered into `band` with the
/// default zero-phase order-4 filter.
pub fn build_dataset(recordings: &[RawRecording], band: Band) -> Result<Vec<LabeledExample>> {
    build_dataset_with_order(recordings, band, DEFAULT_FILTER_ORDER)
}

pub fn build_dataset_with_order(
    recordings: &[RawRecording],
    band: Band,
    order: usize,
) -> Result<Vec<LabeledExample>> {
    let mut specs = Vec::with_capacity(recordings.len());
    for rec in recordings {
        rec.validate()?;
        specs.push(design_bandpass(&band.definition(), rec.sample_rate, order)?);
    }
    let jobs: Vec<(usize, usize)> = recordings
        .iter()
        .enumerate()
        .flat_map(|(r, rec)| (0..rec.channel_labels.len()).map(move |c| (r, c)))
        .collect();
    par::map_slice(&jobs, |&(r, c)| {
        let rec = &recordings[r];
        let channel = &rec.channel_labels[c];
        let context = |e: Error| {
            let what = format!(
                "{} participant {} intensity {} channel {channel}: {e}",
                rec.dataset, rec.participant, rec.intensity
            );
            match e {
                Error::UnknownChannel(_) => e,
                Error::Numeric(_) => Error::Numeric(what),
                _ => Error::Validation(what),
            }
        };
        let label = label_channel(channel).map_err(context)?;
        let features = specs[r].apply(&rec.samples[c]).map_err(context)?;
        Ok(LabeledExample {
            features,
            label,
            meta: ExampleMeta {
                dataset: rec.dataset,
                participant: rec.participant,
                intensity: rec.intensity,
                channel: channel.clone(),
                band,
            },
        })
    })
    .into_iter()
    .collect()
}

/// Apportions `n` over `shares` by largest remainder; ties go to the earlier slot.
fn apportion(n: usize, shares: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = shares.iter().map(|s| s * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    let frac = |i: usize| quotas[i] - sizes[i] as f64;
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// Train, val, test sizes for `n` examples (70/15/15, largest remainder).
pub fn split_sizes(n: usize) -> [usize; 3] {
    let s = apportion(n, &SPLIT_SHARES);
    [s[0], s[1], s[2]]
}

/// Per-class split counts whose rows sum to the class sizes and whose
/// columns sum to `split_sizes(n)`.
fn stratified_counts(class_sizes: &[usize]) -> Vec<[usize; 3]> {
    let n: usize = class_sizes.iter().sum();
    let totals = split_sizes(n);
    let mut counts: Vec<[usize; 3]> = Vec::with_capacity(class_sizes.len());
    let mut cells = Vec::new();
    for (k, &c) in class_sizes.iter().enumerate() {
        let mut row = [0usize; 3];
        for j in 0..3 {
            let q = SPLIT_SHARES[j] * c as f64;
            row[j] = (q + 1e-9).floor() as usize;
            cells.push((q - row[j] as f64, k, j));
        }
        counts.push(row);
    }
    cells.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let row_left = |counts: &[[usize; 3]], k: usize| class_sizes[k] - counts[k].iter().sum::<usize>();
    let col_left = |counts: &[[usize; 3]], j: usize| totals[j] - counts.iter().map(|r| r[j]).sum::<usize>();
    for &(_, k, j) in &cells {
        if row_left(&counts, k) > 0 && col_left(&counts, j) > 0 {
            counts[k][j] += 1;
        }
    }
    // Greedy rounding can leave a few units; any cell with both a row and a
    // column deficit takes them.
    for k in 0..class_sizes.len() {
        for j in 0..3 {
            let extra = row_left(&counts, k).min(col_left(&counts, j));
            counts[k][j] += extra;
        }
    }
    counts
}

/// Seeded, label-stratified 70/15/15 split.
pub fn split_dataset(examples: Vec<LabeledExample>, seed: u64) -> Result<SplitDataset> {
    if examples.len() < 10 {
        return Err(Error::invalid(format!(
            "need at least 10 examples to split, got {}",
            examples.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(), Vec::new()];
    for (i, e) in examples.iter().enumerate() {
        let k = usize::from(e.label);
        if k > 1 {
            return Err(Error::invalid(format!("example {i} has label {}", e.label)));
        }
        by_class[k].push(i);
    }
    let counts = stratified_counts(&[by_class[0].len(), by_class[1].len()]);
    let mut assignment = vec![0usize; examples.len()];
    let mut order: [Vec<usize>; 3] = Default::default();
    for (k, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let mut it = members.iter();
        for (j, part) in order.iter_mut().enumerate() {
            for &i in it.by_ref().take(counts[k][j]) {
                assignment[i] = j;
                part.push(i);
            }
        }
    }
    for part in order.iter_mut() {
        part.shuffle(&mut rng);
    }
    let mut slots: Vec<Option<LabeledExample>> = examples.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<LabeledExample> {
        idx.iter().map(|&i| slots[i].take().expect("each example assigned once")).collect()
    };
    let [tr, va, te] = &order;
    Ok(SplitDataset {
        train: take(tr),
        val: take(va),
        test: take(te),
        seed,
    })
}

/// Z-scores each example's features in place. Constant examples become zero.
pub fn standardize(examples: &mut [LabeledExample]) {
    for e in examples {
        let n = e.features.len() as f64;
        if n == 0.0 {
            continue;
        }
        let mean = e.features.iter().sum::<f64>() / n;
        let var = e.features.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
        for v in &mut e.features {
            *v = (*v - mean) * scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{generate_synthetic, SyntheticConfig, CHANNELS};

    fn dummy(label: u8, i: usize) -> LabeledExample {
        LabeledExample {
            features: vec![i as f64],
            label,
            meta: ExampleMeta {
                dataset: Dataset::MonaLisa,
                participant: 1,
                intensity: Intensity::from_tenths(1).unwrap(),
                channel: CHANNELS[0].to_string(),
                band: Band::Alpha,
            },
        }
    }

    fn examples(left: usize, right: usize) -> Vec<LabeledExample> {
        (0..left)
            .map(|i| dummy(0, i))
            .chain((0..right).map(|i| dummy(1, left + i)))
            .collect()
    }

    #[test]
    fn sizes_by_largest_remainder() {
        assert_eq!(split_sizes(1000), [700, 150, 150]);
        assert_eq!(split_sizes(10), [7, 2, 1]);
        assert_eq!(split_sizes(6200), [4340, 930, 930]);
        assert_eq!(split_sizes(31), [22, 5, 4]);
    }

    #[test]
    fn split_thousand() {
        let s = split_dataset(examples(516, 484), 3).unwrap();
        assert_eq!(s.sizes(), [700, 150, 150]);
    }

    #[test]
    fn split_ten_is_deterministic() {
        let a = split_dataset(examples(5, 5), 11).unwrap();
        let b = split_dataset(examples(5, 5), 11).unwrap();
        assert_eq!(a.sizes(), [7, 2, 1]);
        assert_eq!(a, b);
    }

    #[test]
    fn split_preserves_class_ratio() {
        let s = split_dataset(examples(160, 150), 5).unwrap();
        let left = |v: &[LabeledExample]| v.iter().filter(|e| e.label == 0).count();
        assert_eq!(s.sizes(), [217, 47, 46]);
        assert_eq!(left(&s.train) + left(&s.val) + left(&s.test), 160);
        assert!((left(&s.train) as f64 / 217.0 - 160.0 / 310.0).abs() < 0.01);
        assert!((left(&s.test) as f64 / 46.0 - 160.0 / 310.0).abs() < 0.03);
    }

    #[test]
    fn split_needs_ten() {
        assert!(split_dataset(examples(5, 4), 0).unwrap_err().is_validation());
    }

    #[test]
    fn one_recording_gives_sixteen_left_fifteen_right() {
        let cfg = SyntheticConfig {
            samples: 500,
            datasets: vec![Dataset::MonaLisa],
            ..SyntheticConfig::default()
        };
        let recs = generate_synthetic(&cfg, 1, 1).unwrap();
        let ex = build_dataset(&recs, Band::Beta).unwrap();
        assert_eq!(ex.len(), 31);
        assert_eq!(ex.iter().filter(|e| e.label == 0).count(), 16);
        assert!(ex.iter().all(|e| e.features.len() == 500));
        assert!(build_dataset(&[], Band::Beta).unwrap().is_empty());
    }

    #[test]
    fn standardize_gives_unit_variance() {
        let mut ex = vec![dummy(0, 0)];
        ex[0].features = vec![1.0, 2.0, 3.0, 4.0];
        standardize(&mut ex);
        let f = &ex[0].features;
        assert!(f.iter().sum::<f64>().abs() < 1e-12);
        assert!((f.iter().map(|v| v * v).sum::<f64>() / 4.0 - 1.0).abs() < 1e-12);
    }
}
