//! Hemisphere classification of band-filtered EEG with from-scratch networks.
//!
//! The crate is organised along the processing pipeline:
//!
//! - [`signal`]: recording ingestion, Butterworth band filtering, labeling,
//!   splitting and a synthetic EEG generator.
//! - [`nn`]: layers with explicit forward/backward passes, losses and the
//!   three model architectures (`big`, `small`, `cnn`).
//! - [`optim`]: eight per-parameter update rules.
//! - [`metrics`]: confusion counts, ROC analysis and the efficient-class rule.
//! - [`attribution`]: exact and sampled Shapley values.
//! - [`runner`]: training loop, experiment grid and report emission.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is on (the default) and plain iterators otherwise.
//! Both paths produce bit-identical results.

pub mod attribution;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod par;
pub mod runner;
pub mod seed;
pub mod signal;

pub use error::{Error, Result};
