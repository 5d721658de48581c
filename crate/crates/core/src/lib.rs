//! Online skill identification and anomaly detection for observation
//! streams, built on Gaussian-emission hidden Markov models.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`hmm`] trains one model per skill and scores streams with the
//!   log-space forward algorithm.
//! * [`detect`] turns per-step log-likelihood gradients into skill
//!   identities and anomaly events, alongside two threshold baselines.
//! * [`diagnostics`] inspects decoded state paths and how well the gradient
//!   approximation tracks the exact value.
//! * [`synth`] generates labelled manipulation-style trials, with optional
//!   injected anomalies and a recovery scenario.
//! * [`eval`] computes confusion matrices, reaction times, and
//!   precision/recall/F-measure over matched anomaly events.
//! * [`io`] persists trials, models, calibrations, and event timelines.

pub mod detect;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod hmm;
pub mod io;
pub mod math;
pub mod synth;

pub use error::{Error, Result};
