//! Desk-scale laboratory for long-tailed multi-label image classification.
//!
//! The crate trains a label-query model (a small convolutional encoder whose
//! feature map is attended over by per-class embedding queries through a
//! stack of transformer decoder layers) on reproducible synthetic data, and
//! implements the surrounding bag of tricks: per-class loss reweighting,
//! separate classifier heads, MixUp, geometric-mean test-time augmentation,
//! model-wise and class-wise ensembling, and exogenous label harmonization.
//!
//! Start with the runnable examples (`cargo run --release --example ...`) or
//! the `ltmlc` binary, which exposes the same pipeline as subcommands.

pub mod cli;
pub mod core;
pub mod datapipe;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod model;
pub mod nn;
pub mod rng;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};
