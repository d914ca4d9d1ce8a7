//! Count-conditioned image generation.
//!
//! This crate implements a small GAN that generates images containing a
//! requested number of objects per class, together with everything needed to
//! study it end to end on a single machine:
//!
//! - synthetic counting datasets (multi-digit canvases, colored shape scenes,
//!   and a patch cropper for box-annotated imagery),
//! - the generator / discriminator / count-predictor models with explicit
//!   forward and backward passes (no autodiff framework),
//! - a deterministic training loop with resumable checkpoints,
//! - count-based evaluation metrics plus a small-scale Fréchet feature
//!   distance, and
//! - experiment drivers for count transfer, architecture ablations, and
//!   data-augmentation studies.
//!
//! Everything is seeded: the same config and seed produce bit-identical
//! datasets, training traces, and reports.

pub mod config;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod fsio;
pub mod experiments;
pub mod imageio;
pub mod models;
pub mod nn;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
