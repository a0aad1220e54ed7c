//! Shapley-value attribution with interventional masking.
//!
//! Players are contiguous segments of `segment_size` input features (single
//! features when it is 1). A coalition keeps its segments from the instance
//! and takes every other feature from a background row; the value of the
//! coalition is the model output averaged over the background.

use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::Matrix;
use crate::signal::SAMPLE_RATE;
use crate::{par, seed, Error, Result};

/// Largest player count `exact_shapley` accepts.
pub const EXACT_MAX_PLAYERS: usize = 12;

/// Matrix elements a sampling chunk may allocate at once.
const CHUNK_ELEMENTS: usize = 1 << 22;

#[derive(Clone, Debug, PartialEq)]
pub struct AttributionConfig {
    /// Baseline rows, one per background example.
    pub background: Matrix,
    pub n_permutations: usize,
    pub seed: u64,
    pub segment_size: usize,
}

impl AttributionConfig {
    pub fn new(background: Matrix, n_permutations: usize, seed: u64) -> Self {
        Self {
            background,
            n_permutations,
            seed,
            segment_size: 1,
        }
    }

    pub fn with_segment_size(mut self, segment_size: usize) -> Self {
        self.segment_size = segment_size;
        self
    }

    fn check(&self, instance: &[f64]) -> Result<()> {
        if instance.is_empty() {
            return Err(Error::invalid("cannot explain an empty instance"));
        }
        if self.background.cols() != instance.len() {
            return Err(Error::dim(format!(
                "background has {} features, instance has {}",
                self.background.cols(),
                instance.len()
            )));
        }
        if self.n_permutations == 0 {
            return Err(Error::invalid("n_permutations must be at least 1"));
        }
        if self.segment_size == 0 {
            return Err(Error::invalid("segment_size must be at least 1"));
        }
        Ok(())
    }

    /// Number of players for an instance of `n` features.
    pub fn players(&self, n: usize) -> usize {
        n.div_ceil(self.segment_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    /// One value per player.
    pub phi: Vec<f64>,
    /// Standard error per player; zero for exact enumeration.
    pub std_err: Vec<f64>,
    /// Mean model output over the background.
    pub base_value: f64,
    /// Model output at the instance.
    pub explained_output: f64,
    pub segment_size: usize,
    pub n_features: usize,
}

impl AttributionResult {
    /// `sum(phi) + base - f(x)`; zero up to rounding for exact results.
    pub fn efficiency_residual(&self) -> f64 {
        self.phi.iter().sum::<f64>() + self.base_value - self.explained_output
    }

    /// First input feature covered by player `p`.
    pub fn feature_start(&self, p: usize) -> usize {
        p * self.segment_size
    }
}

/// Copies the instance's values for player `p` into `row`.
fn take_player(row: &mut [f64], instance: &[f64], p: usize, seg: usize) {
    let lo = p * seg;
    let hi = (lo + seg).min(instance.len());
    row[lo..hi].copy_from_slice(&instance[lo..hi]);
}

fn eval<F>(f: &F, m: &Matrix, expected: usize) -> Result<Vec<f64>>
where
    F: Fn(&Matrix) -> Result<Vec<f64>>,
{
    let out = f(m)?;
    if out.len() != expected {
        return Err(Error::dim(format!(
            "value function returned {} outputs for {expected} rows",
            out.len()
        )));
    }
    Ok(out)
}

fn base_and_output<F>(f: &F, instance: &[f64], config: &AttributionConfig) -> Result<(f64, f64)>
where
    F: Fn(&Matrix) -> Result<Vec<f64>>,
{
    let bg = eval(f, &config.background, config.background.rows())?;
    let base = bg.iter().sum::<f64>() / bg.len() as f64;
    let x = Matrix::new(1, instance.len(), instance.to_vec())?;
    Ok((base, eval(f, &x, 1)?[0]))
}

/// Exact Shapley values by enumerating every coalition.
pub fn exact_shapley<F>(f: &F, instance: &[f64], config: &AttributionConfig) -> Result<AttributionResult>
where
    F: Fn(&Matrix) -> Result<Vec<f64>> + Sync,
{
    config.check(instance)?;
    let n = instance.len();
    let seg = config.segment_size;
    let d = config.players(n);
    if d > EXACT_MAX_PLAYERS {
        return Err(Error::invalid(format!(
            "exact enumeration supports at most {EXACT_MAX_PLAYERS} players, got {d}"
        )));
    }
    let (base, fx) = base_and_output(f, instance, config)?;
    let full = (1usize << d) - 1;
    let bg = &config.background;
    let values = par::map_range(1usize << d, |mask| -> Result<f64> {
        if mask == 0 {
            return Ok(base);
        }
        if mask == full {
            return Ok(fx);
        }
        let mut m = bg.clone();
        for r in 0..bg.rows() {
            let row = &mut m.data_mut()[r * n..(r + 1) * n];
            for p in (0..d).filter(|p| mask >> p & 1 == 1) {
                take_player(row, instance, p, seg);
            }
        }
        let out = eval(f, &m, bg.rows())?;
        Ok(out.iter().sum::<f64>() / out.len() as f64)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;

    // weight[s] = s! (d - s - 1)! / d!
    let mut weight = vec![0.0; d];
    for (s, w) in weight.iter_mut().enumerate() {
        let mut v = 1.0 / d as f64;
        for k in 1..=s {
            v *= k as f64 / (d - k) as f64;
        }
        *w = v;
    }
    let phi = (0..d)
        .map(|i| {
            let bit = 1usize << i;
            (0..=full)
                .filter(|m| m & bit == 0)
                .map(|m| weight[m.count_ones() as usize] * (values[m | bit] - values[m]))
                .sum()
        })
        .collect();
    Ok(AttributionResult {
        phi,
        std_err: vec![0.0; d],
        base_value: base,
        explained_output: fx,
        segment_size: seg,
        n_features: n,
    })
}

/// Permutation-sampling Shapley estimate.
///
/// Permutation `k` draws its order and one background row from a stream
/// seeded by `(seed, k)`, then walks from the background row to the instance
/// one player at a time, so every permutation yields one marginal per player.
pub fn sampled_shapley<F>(f: &F, instance: &[f64], config: &AttributionConfig) -> Result<AttributionResult>
where
    F: Fn(&Matrix) -> Result<Vec<f64>> + Sync,
{
    config.check(instance)?;
    let n = instance.len();
    let seg = config.segment_size;
    let d = config.players(n);
    let (base, fx) = base_and_output(f, instance, config)?;
    let per_perm = (d + 1) * n;
    let chunk = (CHUNK_ELEMENTS / per_perm).clamp(1, 256);
    let n_chunks = config.n_permutations.div_ceil(chunk);
    let bg = &config.background;

    let partial = par::map_range(n_chunks, |c| -> Result<(Vec<f64>, Vec<f64>)> {
        let perms = c * chunk..((c + 1) * chunk).min(config.n_permutations);
        let count = perms.len();
        let mut orders = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * per_perm);
        let mut order: Vec<usize> = (0..d).collect();
        for k in perms {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, &[k as u64]));
            order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
            order.shuffle(&mut rng);
            let mut row = bg.row(rng.random_range(0..bg.rows())).to_vec();
            data.extend_from_slice(&row);
            for &p in &order {
                take_player(&mut row, instance, p, seg);
                data.extend_from_slice(&row);
            }
            orders.push(order.clone());
        }
        let m = Matrix::new(count * (d + 1), n, data)?;
        let out = eval(f, &m, count * (d + 1))?;
        let mut sum = vec![0.0; d];
        let mut sum_sq = vec![0.0; d];
        for (k, order) in orders.iter().enumerate() {
            let o = &out[k * (d + 1)..(k + 1) * (d + 1)];
            for (j, &p) in order.iter().enumerate() {
                let delta = o[j + 1] - o[j];
                sum[p] += delta;
                sum_sq[p] += delta * delta;
            }
        }
        Ok((sum, sum_sq))
    });

    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for part in partial {
        let (s, q) = part?;
        sum.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
        sum_sq.iter_mut().zip(&q).for_each(|(a, b)| *a += b);
    }
    let m = config.n_permutations as f64;
    let phi: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let std_err = phi
        .iter()
        .zip(&sum_sq)
        .map(|(mean, sq)| {
            if config.n_permutations < 2 {
                0.0
            } else {
                ((sq - m * mean * mean).max(0.0) / (m - 1.0) / m).sqrt()
            }
        })
        .collect();
    Ok(AttributionResult {
        phi,
        std_err,
        base_value: base,
        explained_output: fx,
        segment_size: seg,
        n_features: n,
    })
}

/// `n` distinct rows of `data` chosen by `seed` (all rows if it has fewer).
pub fn sample_background(data: &Matrix, n: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, data.rows(), n.min(data.rows())).into_vec();
    idx.sort_unstable();
    data.select_rows(&idx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Positive,
    Negative,
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Positive => "+ve",
            Sign::Negative => "-ve",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopImpact {
    /// First input feature of the most influential player.
    pub feature_index: usize,
    pub sign: Sign,
    pub time_seconds: f64,
}

/// Feature index `f` at 250 Hz, in seconds.
pub fn feature_time(f: usize) -> f64 {
    f as f64 / SAMPLE_RATE
}

/// Index of the largest `|v|`, lowest index on ties.
fn argmax_abs(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

pub fn top_impact(result: &AttributionResult) -> Result<TopImpact> {
    if result.phi.is_empty() {
        return Err(Error::invalid("no attributions to rank"));
    }
    let p = argmax_abs(&result.phi);
    let feature_index = result.feature_start(p);
    Ok(TopImpact {
        feature_index,
        sign: if result.phi[p] < 0.0 { Sign::Negative } else { Sign::Positive },
        time_seconds: feature_time(feature_index),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub feature_index: usize,
    pub time_s: f64,
    pub phi_mean: f64,
    pub phi_abs_mean: f64,
}

/// Per-player means over many explained instances, ranked by mean `|phi|`
/// (descending, lower index first on ties).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionSummary {
    pub rows: Vec<FeatureSummary>,
    pub instances: usize,
}

pub fn summarize(results: &[AttributionResult]) -> Result<AttributionSummary> {
    let first = results
        .first()
        .ok_or_else(|| Error::invalid("summarize needs at least one result"))?;
    let d = first.phi.len();
    if let Some(bad) = results
        .iter()
        .find(|r| r.phi.len() != d || r.segment_size != first.segment_size)
    {
        return Err(Error::dim(format!(
            "attribution sizes differ: {} players of {} vs {} of {}",
            d,
            first.segment_size,
            bad.phi.len(),
            bad.segment_size
        )));
    }
    let k = results.len() as f64;
    let mut rows: Vec<FeatureSummary> = (0..d)
        .map(|p| {
            let feature_index = first.feature_start(p);
            FeatureSummary {
                feature_index,
                time_s: feature_time(feature_index),
                phi_mean: results.iter().map(|r| r.phi[p]).sum::<f64>() / k,
                phi_abs_mean: results.iter().map(|r| r.phi[p].abs()).sum::<f64>() / k,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.phi_abs_mean
            .total_cmp(&a.phi_abs_mean)
            .then(a.feature_index.cmp(&b.feature_index))
    });
    Ok(AttributionSummary {
        rows,
        instances: results.len(),
    })
}

impl AttributionSummary {
    /// Sign of the mean attribution of the top-ranked feature.
    pub fn top_sign(&self) -> Option<Sign> {
        self.rows.first().map(|r| {
            if r.phi_mean < 0.0 {
                Sign::Negative
            } else {
                Sign::Positive
            }
        })
    }

    /// `feature_index,time_s,phi_mean,phi_abs_mean` table.
    pub fn to_text(&self) -> String {
        let mut out = String::from("feature_index,time_s,phi_mean,phi_abs_mean\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.feature_index, r.time_s, r.phi_mean, r.phi_abs_mean));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(w: Vec<f64>) -> impl Fn(&Matrix) -> Result<Vec<f64>> + Sync {
        move |m: &Matrix| {
            Ok((0..m.rows())
                .map(|r| m.row(r).iter().zip(&w).map(|(a, b)| a * b).sum())
                .collect())
        }
    }

    fn zero_background(n: usize) -> AttributionConfig {
        AttributionConfig::new(Matrix::zeros(1, n), 100, 0)
    }

    #[test]
    fn linear_game_gives_weight_times_value() {
        let f = linear(vec![2.0, -1.0, 0.5]);
        let r = exact_shapley(&f, &[1.0, 3.0, -4.0], &zero_background(3)).unwrap();
        for (a, b) in r.phi.iter().zip([2.0, -3.0, -2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(r.base_value, 0.0);
    }

    #[test]
    fn and_game_splits_evenly() {
        let f = |m: &Matrix| Ok((0..m.rows()).map(|r| m.get(r, 0) * m.get(r, 1)).collect());
        let r = exact_shapley(&f, &[1.0, 1.0], &zero_background(2)).unwrap();
        assert_eq!(r.phi, vec![0.5, 0.5]);
    }

    #[test]
    fn instance_equal_to_background_gets_nothing() {
        let f = |m: &Matrix| Ok((0..m.rows()).map(|r| m.row(r).iter().map(|v| v.sin()).product()).collect());
        let x = [0.3, 0.9, -0.2];
        let cfg = AttributionConfig::new(Matrix::new(1, 3, x.to_vec()).unwrap(), 10, 0);
        assert!(exact_shapley(&f, &x, &cfg).unwrap().phi.iter().all(|p| *p == 0.0));
        assert!(sampled_shapley(&f, &x, &cfg).unwrap().phi.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn exact_refuses_thirteen_players() {
        let f = linear(vec![1.0; 13]);
        let err = exact_shapley(&f, &[1.0; 13], &zero_background(13)).unwrap_err();
        assert!(err.is_validation());
        // Segments bring the player count back under the limit.
        let cfg = zero_background(13).with_segment_size(2);
        let r = exact_shapley(&f, &[1.0; 13], &cfg).unwrap();
        assert_eq!(r.phi.len(), 7);
        assert!((r.phi[6] - 1.0).abs() < 1e-12);
        assert!((r.phi[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_is_reproducible() {
        let f = |m: &Matrix| Ok((0..m.rows()).map(|r| m.get(r, 0) * m.get(r, 1) + m.get(r, 2)).collect());
        let bg = Matrix::new(2, 3, vec![0.0, 0.5, 1.0, -1.0, 0.2, 0.0]).unwrap();
        let cfg = AttributionConfig::new(bg, 1, 42);
        let a = sampled_shapley(&f, &[1.0, 2.0, 3.0], &cfg).unwrap();
        let b = sampled_shapley(&f, &[1.0, 2.0, 3.0], &cfg).unwrap();
        assert_eq!(a, b);
    }

    fn result(phi: Vec<f64>) -> AttributionResult {
        let d = phi.len();
        AttributionResult {
            phi,
            std_err: vec![0.0; d],
            base_value: 0.0,
            explained_output: 0.0,
            segment_size: 1,
            n_features: d,
        }
    }

    #[test]
    fn top_impact_examples() {
        let t = top_impact(&result(vec![0.1, -0.5, 0.2])).unwrap();
        assert_eq!((t.feature_index, t.sign, t.time_seconds), (1, Sign::Negative, 0.004));
        let t = top_impact(&result(vec![0.5, -0.5])).unwrap();
        assert_eq!((t.feature_index, t.sign), (0, Sign::Positive));
        let mut phi = vec![0.0; 300];
        phi[250] = 1.0;
        assert_eq!(top_impact(&result(phi)).unwrap().time_seconds, 1.0);
        assert_eq!(top_impact(&result(vec![0.0])).unwrap().sign, Sign::Positive);
        assert!(top_impact(&result(vec![])).is_err());
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[result(vec![0.1, -0.5, 0.2])]).unwrap();
        let order: Vec<usize> = s.rows.iter().map(|r| r.feature_index).collect();
        assert_eq!(order, vec![1, 2, 0]);
        assert_eq!(s.top_sign(), Some(Sign::Negative));

        let s = summarize(&[result(vec![0.3, -0.1]), result(vec![-0.3, 0.1])]).unwrap();
        assert!(s.rows.iter().all(|r| r.phi_mean == 0.0 && r.phi_abs_mean > 0.0));
        assert!(s.to_text().starts_with("feature_index,time_s,phi_mean,phi_abs_mean\n0,0,0,0.3\n"));

        assert!(matches!(
            summarize(&[result(vec![1.0]), result(vec![1.0, 2.0])]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn background_sampling_is_seeded_and_capped() {
        let data = Matrix::new(5, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(sample_background(&data, 3, 9), sample_background(&data, 3, 9));
        assert_eq!(sample_background(&data, 3, 9).rows(), 3);
        assert_eq!(sample_background(&data, 50, 9), data);
    }
}
