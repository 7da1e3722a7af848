//! Neural scorers for subjective voice descriptors (SVDs), trained from
//! absolute category ratings (ACR) or pairwise comparison category ratings
//! (CCR) with RankNet, and evaluated with pairwise preference precision
//! (ppref) against agreement-based upper bounds.
//!
//! The crate covers the whole offline pipeline:
//!
//! - [`dataset`]: corpus manifests, label files, speaker-disjoint splits and
//!   the constrained pair sampler;
//! - [`features`]: level normalization, STFT magnitudes and feature files;
//! - [`scorer`]: the `pooled_fc` and `conv_pool` networks with hand-written
//!   backpropagation and a binary checkpoint format;
//! - [`training`]: ACR and CCR trainers and the label-efficiency sweep;
//! - [`metrics`]: ppref, upper bounds and pseudo-F;
//! - [`synth`]: synthetic corpora with known latent scores;
//! - [`annotation`]: the session logic behind the annotation HTTP service.

pub mod annotation;
pub mod dataset;
pub mod error;
pub mod features;
pub mod metrics;
pub mod rng;
pub mod scorer;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
