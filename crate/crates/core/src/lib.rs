//! One-class anomaly detection for guided-wave signals.
//!
//! The pipeline turns raw 1-D ultrasonic recordings into Morlet scalograms
//! ([`signal`]), trains a small convolutional variational autoencoder on
//! healthy recordings only ([`nn`], [`vae`]), and flags unseen recordings
//! whose reconstruction + KL error exceeds a threshold learned from the
//! training errors ([`anomaly`]). [`data`] provides the on-disk corpus
//! format, CSV import and a synthetic tone-burst generator.

pub mod anomaly;
pub mod data;
pub mod nn;
pub mod signal;
pub mod vae;

pub use anomaly::{DetectionReport, ErrorSample, ThresholdSet, Verdict};
pub use data::{Dataset, SplitSpec, SynthConfig};
pub use signal::{Label, ScaleGrid, Scalogram, Signal, WaveletBasis};
pub use vae::{LossBreakdown, TrainConfig, VaeArch, VaeModel};
