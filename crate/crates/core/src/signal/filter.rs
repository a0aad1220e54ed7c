//! Butterworth band-pass design as a cascade of second-order sections.
//!
//! The analog low-pass prototype is mapped to a band-pass with
//! `s -> (s^2 + w0^2) / (s * bw)` on pre-warped edges, then discretised by
//! the bilinear transform. Each section carries one conjugate pole pair and
//! the zeros at `z = 1` and `z = -1`, so its numerator is `g * (1 - z^-2)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Total band-pass order (poles); the prototype has half as many.
pub const DEFAULT_FILTER_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Band {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
}

impl Band {
    pub const ALL: [Band; 5] = [Band::Delta, Band::Theta, Band::Alpha, Band::Beta, Band::Gamma];

    pub fn name(self) -> &'static str {
        match self {
            Band::Delta => "delta",
            Band::Theta => "theta",
            Band::Alpha => "alpha",
            Band::Beta => "beta",
            Band::Gamma => "gamma",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn definition(self) -> BandDefinition {
        let (low_hz, high_hz) = match self {
            Band::Delta => (1.0, 4.0),
            Band::Theta => (5.0, 8.0),
            Band::Alpha => (9.0, 12.0),
            Band::Beta => (13.0, 30.0),
            Band::Gamma => (31.0, 45.0),
        };
        BandDefinition { low_hz, high_hz }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Band::ALL
            .into_iter()
            .find(|b| b.name() == lower)
            .ok_or_else(|| Error::invalid(format!("unknown band {s:?} (delta, theta, alpha, beta, gamma)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandDefinition {
    pub low_hz: f64,
    pub high_hz: f64,
}

/// One biquad `b0 + b1 z^-1 + b2 z^-2 / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sos {
    pub b: [f64; 3],
    /// `[a1, a2]`; `a0` is 1.
    pub a: [f64; 2],
}

impl Sos {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + z_inv * self.b[1] + z2 * self.b[2];
        let den = Complex64::new(1.0, 0.0) + z_inv * self.a[0] + z2 * self.a[1];
        num / den
    }

    /// Direct form II transposed, starting from `state`.
    fn run(&self, x: &mut [f64], mut state: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let y = b0 * *v + state[0];
            state[0] = b1 * *v - a1 * y + state[1];
            state[1] = b2 * *v - a2 * y;
            *v = y;
        }
    }

    /// State that makes a unit step input a steady state.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let g = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let z1 = b2 - a2 * g;
        [b1 - a1 * g + z1, z1]
    }

    fn dc_gain(&self) -> f64 {
        (self.b.iter().sum::<f64>()) / (1.0 + self.a[0] + self.a[1])
    }
}

/// A designed band-pass filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub band: BandDefinition,
    pub sample_rate: f64,
    pub order: usize,
    /// Forward-backward application (squared magnitude, no phase lag).
    pub zero_phase: bool,
    pub sections: Vec<Sos>,
}

/// Butterworth band-pass of total `order` (even) for `band` at `sample_rate`.
pub fn design_bandpass(band: &BandDefinition, sample_rate: f64, order: usize) -> Result<FilterSpec> {
    let nyquist = sample_rate / 2.0;
    if !(sample_rate > 0.0) {
        return Err(Error::invalid("sample rate must be positive"));
    }
    if !(band.low_hz > 0.0 && band.low_hz < band.high_hz) {
        return Err(Error::invalid(format!(
            "band edges must satisfy 0 < low < high, got {}..{}",
            band.low_hz, band.high_hz
        )));
    }
    if band.high_hz >= nyquist {
        return Err(Error::invalid(format!(
            "band edge {} Hz is at or above the Nyquist frequency {nyquist} Hz",
            band.high_hz
        )));
    }
    if order == 0 || order % 2 != 0 {
        return Err(Error::invalid(format!("band-pass order must be even and positive, got {order}")));
    }
    let n = order / 2;
    let fs2 = 2.0 * sample_rate;
    let warp = |f: f64| fs2 * (PI * f / sample_rate).tan();
    let (w_lo, w_hi) = (warp(band.low_hz), warp(band.high_hz));
    let bw = w_hi - w_lo;
    let w0_sq = w_lo * w_hi;

    let mut upper = Vec::with_capacity(n);
    let mut real = Vec::new();
    for k in 1..=n {
        let theta = PI * (2 * k + n - 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta) * bw;
        let disc = (p * p - 4.0 * w0_sq).sqrt();
        for s in [(p + disc) / 2.0, (p - disc) / 2.0] {
            let z = (fs2 + s) / (fs2 - s);
            if z.im.abs() < 1e-12 * z.norm().max(1.0) {
                real.push(z.re);
            } else if z.im > 0.0 {
                upper.push(z);
            }
        }
    }
    let mut sections: Vec<Sos> = upper
        .iter()
        .map(|z| Sos {
            b: [1.0, 0.0, -1.0],
            a: [-2.0 * z.re, z.norm_sqr()],
        })
        .collect();
    real.sort_by(f64::total_cmp);
    for pair in real.chunks(2) {
        let (p1, p2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
        sections.push(Sos {
            b: [1.0, 0.0, -1.0],
            a: [-(p1 + p2), p1 * p2],
        });
    }
    if sections.len() != n {
        return Err(Error::Numeric(format!(
            "band-pass design produced {} sections, expected {n}",
            sections.len()
        )));
    }
    let poles_ok = upper.iter().all(|z| z.norm() < 1.0) && real.iter().all(|p| p.abs() < 1.0);
    if !poles_ok {
        return Err(Error::Numeric("designed filter has a pole on or outside the unit circle".into()));
    }

    // Unit gain at the geometric centre of the pre-warped band.
    let centre = 2.0 * (w0_sq.sqrt() / fs2).atan();
    let z_inv = Complex64::from_polar(1.0, -centre);
    let gain: f64 = sections.iter().map(|s| s.response(z_inv).norm()).product();
    let per_section = gain.powf(-1.0 / n as f64);
    for s in &mut sections {
        s.b.iter_mut().for_each(|b| *b *= per_section);
    }

    Ok(FilterSpec {
        band: *band,
        sample_rate,
        order,
        zero_phase: true,
        sections,
    })
}

impl FilterSpec {
    /// Magnitude of one pass of the cascade at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / self.sample_rate);
        self.sections.iter().map(|s| s.response(z_inv)).product::<Complex64>().norm()
    }

    /// Magnitude of the filter as applied, squared when zero-phase.
    pub fn effective_magnitude(&self, freq_hz: f64) -> f64 {
        let m = self.magnitude(freq_hz);
        if self.zero_phase {
            m * m
        } else {
            m
        }
    }

    /// Samples of padding added at each end for zero-phase application.
    pub fn pad_len(&self) -> usize {
        3 * self.order
    }

    pub fn with_zero_phase(mut self, on: bool) -> Self {
        self.zero_phase = on;
        self
    }

    /// Filters `signal`, returning a sequence of the same length.
    pub fn apply(&self, signal: &[f64]) -> Result<Vec<f64>> {
        if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample at index {i}")));
        }
        if signal.is_empty() {
            return Ok(Vec::new());
        }
        if !self.zero_phase {
            let mut y = signal.to_vec();
            self.cascade(&mut y, None);
            return Ok(y);
        }
        let pad = self.pad_len().min(signal.len() - 1);
        let mut ext = odd_extend(signal, pad);
        let first = ext[0];
        self.cascade(&mut ext, Some(first));
        ext.reverse();
        let first = ext[0];
        self.cascade(&mut ext, Some(first));
        ext.reverse();
        Ok(ext[pad..pad + signal.len()].to_vec())
    }

    /// Runs every section in order. With `steady`, each section starts in the
    /// steady state for a constant input of that level.
    fn cascade(&self, x: &mut [f64], steady: Option<f64>) {
        let mut level = steady.unwrap_or(0.0);
        for s in &self.sections {
            let state = match steady {
                Some(_) => s.step_state().map(|v| v * level),
                None => [0.0; 2],
            };
            s.run(x, state);
            level *= s.dc_gain();
        }
    }
}

/// Point-reflects `pad` samples about each end: `2 x[0] - x[pad..1]`.
fn odd_extend(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    out
}
