//! Uncertainty-aware regression over text pairs.
//!
//! A probabilistic cross-encoder predicts both a score and a heteroscedastic
//! variance for each input pair. Training combines a beta-weighted Gaussian
//! negative log-likelihood, an error-weighted variance penalty, and a
//! representation-alignment loss, all evaluated on variationally ensembled
//! (multi-pass MC-dropout) outputs. The crate also ships the regression and
//! uncertainty metric suite and a synthetic label-noise harness showing that
//! predicted variance separates noisy from clean samples.
//!
//! Module map:
//! - [`losses`]: differentiable loss kernels with analytic gradients
//! - [`metrics`]: regression + UQ metrics, noise-separation AUROC, Welch t-test
//! - [`model`]: the dual-head probabilistic encoder with manual backprop
//! - [`ensemble`]: T-pass variational ensembling (MC dropout)
//! - [`trainer`]: AdamW, LR schedule, early stopping, multi-seed protocol
//! - [`data`]: dataset IO, tokenization, noise injection, augmentation
//! - [`synth`]: synthetic pair generator for the noise experiment

pub mod data;
pub mod ensemble;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use data::{DatasetSplits, ExamplePair, TokenizedPair};
pub use error::Error;
pub use losses::{BatchTargets, LossWeights};
pub use metrics::MetricReport;
pub use model::{EncoderConfig, Model, ModelOutput};
pub use rng::RngStream;
pub use trainer::{RunResult, TrainConfig};

/// Crate result alias.
pub type Result<T> = std::result::Result<T, Error>;
