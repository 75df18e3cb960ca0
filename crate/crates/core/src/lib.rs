//! Normalizing-flow density estimation with adaptive batch normalization.
//!
//! A [`FlowModel`] is a stack of invertible layers (LDU-parametrized linear
//! maps, leaky ReLUs, and batch-norm layers whose mean/variance are stored per
//! domain). The same learned parameters serve every domain; a new domain is
//! registered by computing its batch-norm statistics in a single forward pass
//! ([`adaptation::adapt`]), with no gradient steps.
//!
//! The crate covers the full lifecycle:
//!
//! - exact log-likelihood and both transform directions ([`flow`]),
//! - multi-domain pre-training and fine-tuning with hand-written gradients ([`training`]),
//! - adaptation to unseen domains ([`adaptation`]),
//! - anomaly scores, thresholding, ROC/AUROC ([`scoring`]),
//! - unpaired cross-domain translation by swapping statistics ([`translation`]),
//! - an autoencoder baseline ([`baseline`]),
//! - seeded synthetic multi-domain benchmarks ([`synth`]) and the experiment matrix ([`experiment`]).

pub mod adaptation;
pub mod baseline;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod optim;
pub mod scoring;
pub mod seed;
pub mod synth;
pub mod training;
pub mod translation;

pub use data::Dataset;
pub use error::{Error, Result};
pub use flow::{DomainId, DomainStats, FlowModel, Layer, LayerStats};
