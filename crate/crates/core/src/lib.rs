//! Dualformer: a dual-domain transformer for long-term time-series forecasting.
//!
//! Each encoder layer runs a time-domain attention branch and a
//! frequency-domain autocorrelation branch on a layer-specific frequency
//! band, and fuses them with weights derived from the harmonic energy ratio
//! of the input.
//!
//! Module map:
//!
//! - [`numeric`]: dense `f64` tensors, a reverse-mode tape, FFT kernels and a
//!   finite-difference gradient checker.
//! - [`spectral`]: one-sided spectra, hierarchical frequency sampling plans,
//!   peak detection, harmonic energy weighting and the harmonic-energy lower
//!   bound verifier.
//! - [`attention`]: the time branch and the autocorrelation branch.
//! - [`model`]: RevIN, embedding, the encoder stack and the forecasting head.
//! - [`data`]: CSV ingestion, splits, windows, z-scoring and synthetic signals.
//! - [`pipeline`]: metrics, Adam with cosine decay, early stopping, training
//!   and evaluation.

pub mod attention;
pub mod data;
pub mod error;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod spectral;

pub use error::{Error, Result};
