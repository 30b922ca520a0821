//! Closed-loop adversarial robustness for small image classifiers.
//!
//! A baseline classifier is trained and stored together with its clean
//! accuracy. An insider adversary with white-box access crafts an FGSM
//! dataset and uploads it; the monitor compares served accuracy against the
//! stored baseline and, on a drop of more than five points, triggers a PGD
//! adversarial-training pipeline that fine-tunes the baseline into a
//! hardened model and redeploys it.
//!
//! The crate is organised by pipeline stage: [`nn`] (tensor engine and
//! training), [`data`] (IDX, synthetic data, registry), [`attack`] (FGSM),
//! [`defense`] (projection, PGD, adversarial training), [`monitor`]
//! (accuracy and degradation trigger), and [`orchestrator`] (model volume,
//! event log, state machine, scenarios, grid). [`cli`] wires it all to the
//! `robustops` binary.

pub mod attack;
pub mod cli;
pub mod data;
pub mod defense;
pub mod error;
pub mod monitor;
pub mod nn;
pub mod orchestrator;
pub mod store;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
