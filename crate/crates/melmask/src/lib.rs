//! Self-supervised audio representation learning on mel spectrograms.
//!
//! The pipeline: decode audio, resample to 16 kHz, cut paired 3 s segments,
//! compute 128x96 log-mel spectrograms, tile them into patch tokens, keep a
//! random 10% of the tokens, and train a small ViT encoder so that the two
//! masked views of the same clip agree under a temperature-scaled
//! contrastive loss. A masked auto-encoder baseline, a frozen-feature probe
//! harness with a 216-point hyperparameter grid, and ablation sweeps over
//! masking ratio and batch size round out the toolkit.
//!
//! Everything runs on CPU on top of a minimal reverse-mode autodiff engine
//! ([`autodiff`]); no external ML framework is involved.

pub mod audio;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod error;
pub mod masking;
pub mod objectives;
pub mod probe;
pub mod trainer;
pub mod vit;

pub use error::{Error, Result};
