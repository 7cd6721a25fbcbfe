//! Pretext-task label selection via conditional independence estimates.
//!
//! The crate estimates how useful an automatically computed audio label
//! (F0, loudness, zero-crossing rate, ...) is as a self-supervised pretext
//! task for a given downstream classification problem. The estimate is a
//! class-conditional HSIC between the audio samples and the label: lower
//! values mean the label is closer to independent of the samples once the
//! downstream class is known.
//!
//! Beyond per-label estimates the crate finds simplex-constrained weights over
//! a group of labels (softmax or sparsemax parameterization), provides MRMR
//! and RFE selection baselines, and ships analysis helpers (rank
//! correlations, subsampling robustness, ternary weight sweeps).
//!
//! Module map:
//! - [`features`]: audio framing, Mel spectrograms and frame-level label extractors
//! - [`kernels`]: Gaussian downsampling, cosine and RBF kernels, distance matrices
//! - [`hsic`]: per-class HSIC, class-weighted aggregation, weighted label kernels
//! - [`weight_opt`]: softmax/sparsemax maps and the gradient-based weight search
//! - [`baselines`]: mutual information, MRMR and RFE selectors
//! - [`analysis`]: Spearman/Kendall, subsample robustness, ternary sweeps
//! - [`data`]: manifests, label tables and the assembled dataset

pub mod analysis;
pub mod baselines;
pub mod data;
pub mod error;
pub mod features;
pub mod hsic;
pub mod io;
pub mod kernels;
pub mod pipeline;
pub mod rng;
pub mod synthetic;
pub mod weight_opt;

pub use error::{Error, Result};
