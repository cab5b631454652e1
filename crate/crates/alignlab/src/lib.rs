//! Learning binary classifiers under instance-dependent label noise, using a
//! small set of instances whose observed and verified labels are both known.
//!
//! The method trains two feed-forward networks: a classifier that predicts
//! the positive-class probability from features alone, and an auxiliary
//! confidence net that predicts, from the features plus the observed label,
//! whether that observed label is correct. Training runs in two stages:
//! pre-training on the verified subset, then alternating fine-tuning over
//! all data where the confidence net's outputs soft-filter the noisy loss
//! and per-group clean rates re-weight it so noisier groups aren't drowned
//! out. Evaluation combines AUROC with the area under the equalized-odds
//! curve through their harmonic mean.
//!
//! The crate ships as a library plus a thin `alignlab` binary. Start with
//! the `examples/` directory: each major capability (data generation, noise
//! injection, two-stage training, metrics, sweeps, ablation, sensitivity)
//! has a runnable example.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod noisegen;
pub mod objective;
pub mod pipeline;

pub use error::{Error, Result};
