//! Synthetic EEG: pink noise plus band-limited sinusoids whose power depends
//! on the hemisphere. Used in place of the external corpus.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::filter::Band;
use super::recording::{label_channel, Dataset, Intensity, RawRecording, CHANNELS, SAMPLES_PER_RECORDING, SAMPLE_RATE};
use crate::{par, seed, Error, Result};

const SINUSOIDS_PER_BAND: usize = 3;
const STIMULUS_STREAM: u64 = 0x5717;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Band power multipliers for left (`-A1`) channels, indexed like `Band::ALL`.
    pub left: [f64; 5],
    /// Band power multipliers for right (`-A2`) channels.
    pub right: [f64; 5],
    /// RMS of the pink-noise floor.
    pub noise_amplitude: f64,
    /// Each sinusoid's amplitude is scaled by `1 + jitter * U(-1, 1)`.
    pub jitter: f64,
    /// Sinusoid frequencies and phases are fixed per dataset (a stimulus-locked
    /// response) instead of drawn per channel.
    pub phase_locked: bool,
    pub samples: usize,
    pub sample_rate: f64,
    pub datasets: Vec<Dataset>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            left: [1.0, 1.0, 1.0, 2.0, 1.0],
            right: [1.0; 5],
            noise_amplitude: 1.0,
            jitter: 0.1,
            phase_locked: true,
            samples: SAMPLES_PER_RECORDING,
            sample_rate: SAMPLE_RATE,
            datasets: Dataset::ALL.to_vec(),
        }
    }
}

impl SyntheticConfig {
    /// Same multipliers on both hemispheres.
    pub fn symmetric() -> Self {
        Self {
            left: [1.0; 5],
            ..Self::default()
        }
    }

    pub fn multiplier(&self, band: Band, label: u8) -> f64 {
        if label == 0 {
            self.left[band.index()]
        } else {
            self.right[band.index()]
        }
    }

    pub fn set_multiplier(&mut self, band: Band, left: f64, right: f64) {
        self.left[band.index()] = left;
        self.right[band.index()] = right;
    }

    /// True if some band differs between hemispheres.
    pub fn is_separable(&self) -> bool {
        self.left.iter().zip(&self.right).any(|(l, r)| l != r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.left.iter().chain(&self.right).any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::invalid("band multipliers must be finite and >= 0"));
        }
        if !(self.noise_amplitude.is_finite() && self.noise_amplitude >= 0.0) {
            return Err(Error::invalid("noise amplitude must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::invalid("jitter must be in [0, 1)"));
        }
        if self.samples < 2 {
            return Err(Error::invalid("need at least 2 samples per channel"));
        }
        if !(self.sample_rate > 2.0 * Band::Gamma.definition().high_hz) {
            return Err(Error::invalid("sample rate must exceed twice the gamma upper edge"));
        }
        if self.datasets.is_empty() {
            return Err(Error::invalid("at least one dataset is required"));
        }
        Ok(())
    }
}

/// Pink noise by Paul Kellet's filter bank, scaled to unit RMS.
fn pink_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let w: f64 = rng.sample(StandardNormal);
        b[0] = 0.99886 * b[0] + w * 0.0555179;
        b[1] = 0.99332 * b[1] + w * 0.0750759;
        b[2] = 0.96900 * b[2] + w * 0.1538520;
        b[3] = 0.86650 * b[3] + w * 0.3104856;
        b[4] = 0.55000 * b[4] + w * 0.5329522;
        b[5] = -0.7616 * b[5] - w * 0.0168980;
        out.push(b[..6].iter().sum::<f64>() + b[6] + w * 0.5362);
        b[6] = w * 0.115926;
    }
    let mean = out.iter().sum::<f64>() / n as f64;
    let rms = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let scale = if rms > 0.0 { 1.0 / rms } else { 0.0 };
    out.iter_mut().for_each(|v| *v = (*v - mean) * scale);
    out
}

/// `(frequency, phase)` of every sinusoid, band by band.
type Rhythms = [[(f64, f64); SINUSOIDS_PER_BAND]; 5];

fn draw_rhythms(rng: &mut ChaCha8Rng) -> Rhythms {
    let mut out = [[(0.0, 0.0); SINUSOIDS_PER_BAND]; 5];
    for band in Band::ALL {
        let def = band.definition();
        let margin = 0.1 * (def.high_hz - def.low_hz);
        for slot in &mut out[band.index()] {
            *slot = (
                rng.random_range(def.low_hz + margin..=def.high_hz - margin),
                rng.random_range(0.0..2.0 * PI),
            );
        }
    }
    out
}

fn channel(config: &SyntheticConfig, label: u8, locked: Option<&Rhythms>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = config.samples;
    let mut x = pink_noise(rng, n);
    x.iter_mut().for_each(|v| *v *= config.noise_amplitude);
    let rhythms = match locked {
        Some(r) => *r,
        None => draw_rhythms(rng),
    };
    for band in Band::ALL {
        let amp = config.multiplier(band, label).sqrt();
        for &(f, phase) in &rhythms[band.index()] {
            let a = amp * (1.0 + config.jitter * rng.random_range(-1.0..=1.0));
            if a == 0.0 {
                continue;
            }
            let w = 2.0 * PI * f / config.sample_rate;
            for (t, v) in x.iter_mut().enumerate() {
                *v += a * (w * t as f64 + phase).sin();
            }
        }
    }
    x
}

/// Recordings for participants `1..=n_participants` and intensities
/// `0.1..=n_intensities/10` in every configured dataset.
pub fn generate_synthetic(
    config: &SyntheticConfig,
    n_participants: u32,
    n_intensities: u8,
) -> Result<Vec<RawRecording>> {
    config.validate()?;
    if !(1..=10).contains(&n_participants) || !(1..=10).contains(&n_intensities) {
        return Err(Error::invalid("participants and intensities must each be 1..=10"));
    }
    let mut keys = Vec::new();
    for &dataset in &config.datasets {
        for p in 1..=n_participants {
            for i in 1..=n_intensities {
                keys.push((dataset, p, Intensity::from_tenths(i)?));
            }
        }
    }
    par::map_slice(&keys, |&(dataset, participant, intensity)| {
        let s = seed::derive(
            config.seed,
            &[dataset as u64, u64::from(participant), u64::from(intensity.tenths())],
        );
        let locked = config.phase_locked.then(|| {
            let s = seed::derive(config.seed, &[dataset as u64, STIMULUS_STREAM]);
            draw_rhythms(&mut ChaCha8Rng::seed_from_u64(s))
        });
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let samples = CHANNELS
            .iter()
            .map(|c| Ok(channel(config, label_channel(c)?, locked.as_ref(), &mut rng)))
            .collect::<Result<Vec<_>>>()?;
        RawRecording::new(
            dataset,
            participant,
            intensity,
            CHANNELS.iter().map(|c| c.to_string()).collect(),
            samples,
            config.sample_rate,
        )
    })
    .into_iter()
    .collect()
}
