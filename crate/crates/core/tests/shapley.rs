mod common;

use bandnet::attribution::{exact_shapley, sampled_shapley, top_impact, AttributionConfig, Sign};
use bandnet::nn::Matrix;
use bandnet::Result;
use common::{random_net, random_rows};
use proptest::prelude::*;

/// The Shapley formula transcribed directly: subset weights times marginal
/// contributions, with `v(S)` averaged over the background rows.
fn formula(f: &dyn Fn(&Matrix) -> Result<Vec<f64>>, x: &[f64], bg: &Matrix) -> Vec<f64> {
    let d = x.len();
    let v = |mask: usize| {
        let rows: Vec<Vec<f64>> = (0..bg.rows())
            .map(|r| (0..d).map(|i| if mask >> i & 1 == 1 { x[i] } else { bg.get(r, i) }).collect())
            .collect();
        let out = f(&Matrix::from_rows(&rows).unwrap()).unwrap();
        out.iter().sum::<f64>() / out.len() as f64
    };
    let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
    (0..d)
        .map(|i| {
            (0..1usize << d)
                .filter(|s| s >> i & 1 == 0)
                .map(|s| {
                    let k = s.count_ones() as usize;
                    fact(k) * fact(d - k - 1) / fact(d) * (v(s | 1 << i) - v(s))
                })
                .sum()
        })
        .collect()
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

#[test]
fn enumeration_matches_the_formula_and_is_efficient() {
    for seed in 0..20 {
        let d = 2 + seed as usize % 7;
        let f = random_net(seed, d);
        let bg = random_rows(100 + seed, 4, d);
        let x = random_rows(200 + seed, 1, d).row(0).to_vec();
        let exact = exact_shapley(&f, &x, &AttributionConfig::new(bg.clone(), 1, 0)).unwrap();
        let want = formula(&f, &x, &bg);
        for (a, b) in exact.phi.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
        }
        assert!(exact.efficiency_residual().abs() < 1e-9);
    }
}

#[test]
fn symmetric_and_dummy_players() {
    // f = (x0 + x1)^2 + 0 * x2: players 0 and 1 are interchangeable, 2 is a dummy.
    let f = |m: &Matrix| -> Result<Vec<f64>> { Ok((0..m.rows()).map(|r| (m.get(r, 0) + m.get(r, 1)).powi(2)).collect()) };
    let bg = Matrix::new(2, 3, vec![0.0, 0.0, 5.0, 0.5, 0.5, -1.0]).unwrap();
    let res = exact_shapley(&f, &[1.0, 1.0, 3.0], &AttributionConfig::new(bg, 1, 0)).unwrap();
    assert!((res.phi[0] - res.phi[1]).abs() < 1e-12);
    assert!(res.phi[2].abs() < 1e-12);
}

#[test]
fn sampling_agrees_with_enumeration_at_twenty_thousand() {
    let mut total = 0.0;
    for seed in 0..10 {
        let d = 3 + seed as usize % 8;
        let f = random_net(seed, d);
        let bg = random_rows(300 + seed, 5, d);
        let x = random_rows(400 + seed, 1, d).row(0).to_vec();
        let exact = exact_shapley(&f, &x, &AttributionConfig::new(bg.clone(), 1, 0)).unwrap();
        let sampled = sampled_shapley(&f, &x, &AttributionConfig::new(bg, 20_000, seed)).unwrap();
        let mad = mean_abs_diff(&exact.phi, &sampled.phi);
        assert!(mad < 0.01, "seed {seed}: {mad}");
        total += mad;
    }
    assert!(total / 10.0 < 0.01);
}

#[test]
fn sampling_error_shrinks_with_budget() {
    let budgets = [1_000, 5_000, 20_000];
    let mut mads = [0.0; 3];
    for seed in 0..10 {
        let f = random_net(50 + seed, 8);
        let bg = random_rows(500 + seed, 5, 8);
        let x = random_rows(600 + seed, 1, 8).row(0).to_vec();
        let exact = exact_shapley(&f, &x, &AttributionConfig::new(bg.clone(), 1, 0)).unwrap();
        for (k, &n) in budgets.iter().enumerate() {
            let s = sampled_shapley(&f, &x, &AttributionConfig::new(bg.clone(), n, seed)).unwrap();
            mads[k] += mean_abs_diff(&exact.phi, &s.phi) / 10.0;
        }
    }
    assert!(mads[0] > mads[1] && mads[1] > mads[2], "{mads:?}");
}

#[test]
fn efficiency_residual_falls_like_inverse_root_budget() {
    // The walk telescopes to f(x) - f(b) per permutation, so the residual is
    // the background-mean sampling error alone.
    let (mut r10, mut r40) = (0.0, 0.0);
    for seed in 0..10 {
        let f = random_net(70 + seed, 10);
        let bg = random_rows(700 + seed, 50, 10);
        let x = random_rows(800 + seed, 1, 10).row(0).to_vec();
        let a = sampled_shapley(&f, &x, &AttributionConfig::new(bg.clone(), 10_000, seed)).unwrap();
        let b = sampled_shapley(&f, &x, &AttributionConfig::new(bg, 40_000, seed + 100)).unwrap();
        r10 += a.efficiency_residual().powi(2);
        r40 += b.efficiency_residual().powi(2);
    }
    let ratio = (r40 / r10).sqrt();
    assert!(ratio <= 0.5 * 1.5, "rms ratio {ratio}");
}

#[test]
fn one_permutation_is_reproducible() {
    let f = random_net(9, 5);
    let bg = random_rows(9, 3, 5);
    let x = [0.3, -0.2, 0.9, 0.1, -0.7];
    let a = sampled_shapley(&f, &x, &AttributionConfig::new(bg.clone(), 1, 42)).unwrap();
    let b = sampled_shapley(&f, &x, &AttributionConfig::new(bg, 1, 42)).unwrap();
    assert_eq!(a.phi, b.phi);
}

#[test]
fn segments_group_features() {
    // With segments of 4 over 10 features, a linear game gives each segment
    // the sum of its members' contributions.
    let w: Vec<f64> = (0..10).map(|i| i as f64 - 4.5).collect();
    let wf = w.clone();
    let f = move |m: &Matrix| -> Result<Vec<f64>> {
        Ok((0..m.rows()).map(|r| m.row(r).iter().zip(&wf).map(|(a, b)| a * b).sum()).collect())
    };
    let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
    let cfg = AttributionConfig::new(Matrix::zeros(1, 10), 1, 0).with_segment_size(4);
    let res = exact_shapley(&f, &x, &cfg).unwrap();
    assert_eq!(res.phi.len(), 3);
    for (p, range) in [(0, 0..4), (1, 4..8), (2, 8..10)] {
        let want: f64 = range.map(|i| w[i] * x[i]).sum();
        assert!((res.phi[p] - want).abs() < 1e-12);
    }
    let top = top_impact(&res).unwrap();
    assert_eq!(top.feature_index % 4, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn linear_games_give_weight_times_displacement(
        w in proptest::collection::vec(-2.0f64..2.0, 1..8),
        seed in any::<u64>(),
    ) {
        let d = w.len();
        let x = random_rows(seed, 1, d).row(0).to_vec();
        let bg = random_rows(seed ^ 1, 3, d);
        let wf = w.clone();
        let f = move |m: &Matrix| -> Result<Vec<f64>> {
            Ok((0..m.rows()).map(|r| m.row(r).iter().zip(&wf).map(|(a, b)| a * b).sum()).collect())
        };
        let res = exact_shapley(&f, &x, &AttributionConfig::new(bg.clone(), 1, 0)).unwrap();
        for i in 0..d {
            let mean_bg = (0..3).map(|r| bg.get(r, i)).sum::<f64>() / 3.0;
            prop_assert!((res.phi[i] - w[i] * (x[i] - mean_bg)).abs() < 1e-12);
        }
        let top = top_impact(&res).unwrap();
        prop_assert_eq!(top.sign == Sign::Negative, res.phi[top.feature_index] < 0.0);
        prop_assert_eq!(top.time_seconds, top.feature_index as f64 / 250.0);
    }
}
