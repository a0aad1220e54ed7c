mod common;

use bandnet::optim::{step, Accumulators, OptimizerConfig, OptimizerState, Rule};
use common::{optimizer_library as library, optimizer_oracle as oracle};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn every_rule_matches_its_scalar_transcription() {
    let mut rng = common::rng(4);
    for _ in 0..20 {
        let lr = 10f64.powf(rng.random_range(-4.0..-0.5));
        let w0 = rng.random_range(-3.0..3.0);
        for rule in Rule::ALL {
            let want = oracle(rule, lr, w0, 3);
            let got = library(rule, lr, w0, 3);
            for (s, (a, b)) in got.iter().zip(&want).enumerate() {
                assert!((a - b).abs() < 1e-12, "{rule} lr={lr} w0={w0} step {}: {a} vs {b}", s + 1);
            }
        }
    }
}

#[test]
fn adadelta_is_nearly_scale_free_on_the_first_step() {
    let first = |g: f64| {
        let config = OptimizerConfig::new(Rule::Adadelta, 1.0);
        let mut state = OptimizerState::new(Rule::Adadelta, 1);
        let mut w = [0.0];
        step(&mut w, &[g], &mut state, &config).unwrap();
        w[0].abs()
    };
    let (small, large) = (first(1.0), first(100.0));
    assert!((small - 0.0044721).abs() < 1e-7);
    assert!((small - large).abs() / small < 0.01);
}

fn nonnegative(acc: &Accumulators) -> bool {
    let all = |v: &Vec<f64>| v.iter().all(|x| *x >= 0.0);
    match acc {
        Accumulators::Sgd { .. } => true,
        Accumulators::Adagrad { sum_sq } => all(sum_sq),
        Accumulators::Adadelta {
            avg_sq_grad,
            avg_sq_delta,
        } => all(avg_sq_grad) && all(avg_sq_delta),
        Accumulators::Rmsprop { avg_sq } => all(avg_sq),
        Accumulators::Adam { v, .. } | Accumulators::Nadam { v, .. } => all(v),
        Accumulators::Adamax { u, .. } => all(u),
        Accumulators::Ftrl { n, .. } => all(n),
    }
}

proptest! {
    #[test]
    fn steps_count_and_accumulators_stay_nonnegative(
        rule_idx in 0usize..8,
        grads in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..6),
        lr in 1e-4f64..0.5,
    ) {
        let rule = Rule::ALL[rule_idx];
        let config = OptimizerConfig::new(rule, lr);
        let mut state = OptimizerState::new(rule, 3);
        let mut w = vec![0.5, -0.5, 1.0];
        for (i, g) in grads.iter().enumerate() {
            step(&mut w, g, &mut state, &config).unwrap();
            prop_assert_eq!(state.t, i as u64 + 1);
            prop_assert!(nonnegative(&state.acc));
            prop_assert!(w.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn zero_gradient_leaves_weights_alone_from_rest(rule_idx in 0usize..8, w0 in -3.0f64..3.0) {
        let rule = Rule::ALL[rule_idx];
        let mut state = OptimizerState::new(rule, 1);
        let mut w = [w0];
        step(&mut w, &[0.0], &mut state, &OptimizerConfig::new(rule, 0.1)).unwrap();
        prop_assert_eq!(w[0], w0);
    }
}
