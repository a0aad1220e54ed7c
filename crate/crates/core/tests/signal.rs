mod common;

use std::f64::consts::PI;

use bandnet::signal::{
    build_dataset, design_bandpass, generate_synthetic, label_channel, load_recording, load_recordings,
    save_recordings, split_dataset, split_sizes, Band, Dataset, SyntheticConfig, CHANNELS, SAMPLE_RATE,
};
use bandnet::Error;
use proptest::prelude::*;
use rand::Rng;
use common::{band_power, total_power};

fn sine(freq: f64, n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|i| (2.0 * PI * freq * i as f64 / SAMPLE_RATE + phase).sin()).collect()
}

fn filter(band: Band) -> bandnet::signal::FilterSpec {
    design_bandpass(&band.definition(), SAMPLE_RATE, 4).unwrap()
}

#[test]
fn band_selectivity_by_fft() {
    let x = sine(10.0, 15_000, 0.0);
    let p = total_power(&x);
    assert!(total_power(&filter(Band::Alpha).apply(&x).unwrap()) >= 0.9 * p);
    assert!(total_power(&filter(Band::Gamma).apply(&x).unwrap()) <= 0.01 * p);
    let slow = sine(2.0, 15_000, 0.3);
    assert!(total_power(&filter(Band::Delta).apply(&slow).unwrap()) >= 0.9 * total_power(&slow));
}

#[test]
fn filtering_is_linear() {
    let mut rng = common::rng(31);
    let x: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (a, b) = (2.5, -0.75);
    for band in Band::ALL {
        let spec = filter(band);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = spec.apply(&mix).unwrap();
        let (fx, fy) = (spec.apply(&x).unwrap(), spec.apply(&y).unwrap());
        let rhs: Vec<f64> = fx.iter().zip(&fy).map(|(p, q)| a * p + b * q).collect();
        let scale = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err = lhs.iter().zip(&rhs).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-9 * scale, "{band}: {err} vs {scale}");
    }
}

#[test]
fn zero_phase_keeps_in_band_sinusoids_aligned() {
    for (band, freq) in [(Band::Alpha, 10.5), (Band::Beta, 20.0), (Band::Theta, 6.5)] {
        let x = sine(freq, 5000, 0.7);
        let y = filter(band).apply(&x).unwrap();
        let lag = (-20i64..=20)
            .max_by(|&a, &b| {
                let xc = |l: i64| (1000..4000).map(|i| x[i] * y[(i as i64 + l) as usize]).sum::<f64>();
                xc(a).total_cmp(&xc(b))
            })
            .unwrap();
        assert_eq!(lag, 0, "{band}");
    }
}

#[test]
fn bands_partition_white_noise_power() {
    let mut rng = common::rng(32);
    let x: Vec<f64> = (0..15_000).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    let reference = band_power(&x, 1.0, 45.0);
    let share = |zero_phase: bool| {
        Band::ALL
            .iter()
            .map(|&b| total_power(&filter(b).with_zero_phase(zero_phase).apply(&x).unwrap()))
            .sum::<f64>()
            / reference
    };
    let single = share(false);
    assert!((0.9..=1.05).contains(&single), "single pass share {single}");
    // The forward-backward pass squares each response, which narrows every band.
    assert!(share(true) < single);
}

#[test]
fn recordings_round_trip_through_files() {
    let cfg = SyntheticConfig {
        samples: 200,
        datasets: vec![Dataset::NeckerCube],
        ..SyntheticConfig::default()
    };
    let recs = generate_synthetic(&cfg, 2, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = save_recordings(&recs, dir.path()).unwrap();
    assert_eq!(paths.len(), 4);
    let back = load_recordings(dir.path()).unwrap();
    assert_eq!(back.len(), recs.len());
    for r in &recs {
        assert!(back.contains(r));
    }
}

#[test]
fn malformed_files_are_rejected_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let header = "# dataset=NeckerCube participant=1 intensity=0.1 rate=250 samples=3\n";
    let mut body = String::new();
    for label in &CHANNELS[..30] {
        body.push_str(&format!("{label},1,2,3\n"));
    }
    let short = dir.path().join("short.csv");
    std::fs::write(&short, format!("{header}{body}")).unwrap();
    let err = load_recording(&short).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");
    assert!(err.to_string().contains("short.csv"));

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, header).unwrap();
    assert!(load_recording(&empty).is_err());

    let mut uneven = body.clone();
    uneven.push_str(&format!("{},1,2\n", CHANNELS[30]));
    let path = dir.path().join("uneven.csv");
    std::fs::write(&path, format!("{header}{uneven}")).unwrap();
    let err = load_recording(&path).unwrap_err();
    assert!(err.to_string().contains("32"), "{err}");
}

#[test]
fn channel_labels_follow_suffix() {
    assert_eq!(label_channel("O2-A2").unwrap(), 1);
    assert_eq!(label_channel("Cpz-A1").unwrap(), 0);
    assert!(label_channel("O2").is_err());
    let right = CHANNELS.iter().filter(|c| label_channel(c).unwrap() == 1).count();
    assert_eq!((CHANNELS.len() - right, right), (16, 15));
}

#[test]
fn dataset_counts_and_splits() {
    let cfg = SyntheticConfig {
        samples: 300,
        ..SyntheticConfig::default()
    };
    let recs = generate_synthetic(&cfg, 2, 3).unwrap();
    let examples = build_dataset(&recs, Band::Beta).unwrap();
    assert_eq!(examples.len(), recs.len() * 31);
    let right = examples.iter().filter(|e| e.label == 1).count();
    assert_eq!((examples.len() - right) * 15, right * 16);
    assert!(build_dataset(&[], Band::Beta).unwrap().is_empty());

    let a = split_dataset(examples.clone(), 5).unwrap();
    let b = split_dataset(examples, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.sizes(), split_sizes(372));
    assert_eq!(split_sizes(1000), [700, 150, 150]);
}

proptest! {
    #[test]
    fn split_sizes_follow_largest_remainder(n in 10usize..100_000) {
        let [train, val, test] = split_sizes(n);
        prop_assert_eq!(train + val + test, n);
        let exact = [0.7 * n as f64, 0.15 * n as f64, 0.15 * n as f64];
        for (got, want) in [train, val, test].iter().zip(exact) {
            prop_assert!((*got as f64 - want).abs() < 1.0);
        }
        prop_assert!(train == (0.7 * n as f64).floor() as usize || train == (0.7 * n as f64).ceil() as usize);
    }

    #[test]
    fn filtering_zero_gives_zero(len in 1usize..400, band_idx in 0usize..5) {
        let y = filter(Band::ALL[band_idx]).apply(&vec![0.0; len]).unwrap();
        prop_assert_eq!(y.len(), len);
        prop_assert!(y.iter().all(|v| *v == 0.0));
    }
}
