//! Distillation of pathological high-frequency oscillations (HFOs) from the
//! high-recall output of legacy rule-based detectors.
//!
//! The pipeline runs in five stages:
//!
//! 1. ingest detector events and raw waveforms ([`data`]), cut fixed windows
//!    around each event and turn them into normalized Morlet scalograms ([`tf`]);
//! 2. pre-train a convolutional VAE on the scalograms with a perceptual
//!    reconstruction loss and a self-adjusting β ([`vae`], built on the small
//!    reverse-mode engine in [`tensor`]);
//! 3. discover weak labels by two-stage k-means in the latent space, using
//!    reconstruction error and resection overlap to name the clusters
//!    ([`labels`]);
//! 4. distill the weak labels into a classification head trained on real and
//!    VAE-generated surrogate latents ([`classifier`]);
//! 5. score the predictions with clinical metrics: resection ratio, outcome
//!    regression, specificity ([`eval`]).
//!
//! [`synth`] generates planted-truth datasets for desk-scale verification and
//! [`latent`] provides interpolation sweeps and knockout diagnostics.

pub mod classifier;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod labels;
pub mod latent;
pub mod par;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod tf;
pub mod util;
pub mod vae;

pub use error::{Error, Result};
