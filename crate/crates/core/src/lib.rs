//! Multi-fusion attentive classifier for audio anti-spoofing.
//!
//! The pipeline: a frozen frontend turns waveforms (or a synthetic
//! generator) into L x T x D stacks of frame embeddings; per-layer
//! attentive statistics pooling summarizes each layer over time; a second
//! attentive pooler fuses the per-layer summaries; a small FC head emits a
//! two-class prediction whose logit difference is the countermeasure score.
//! Training uses Adam with a step learning-rate schedule, and evaluation
//! reports equal error rate and the minimum normalized tandem detection
//! cost.
//!
//! All backward passes are written by hand and verified against central
//! finite differences (see [`gradcheck`]). Everything is deterministic
//! given seeds, including file bytes.

pub mod asp;
pub mod error;
pub mod formats;
pub mod frontend;
pub mod gradcheck;
pub mod kernel;
pub mod metrics;
pub mod mfa;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
