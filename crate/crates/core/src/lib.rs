//! Bayesian Monte Carlo dropout heads over precomputed text embeddings.
//!
//! The pipeline is: raw embedding → [`kernels`] feature map → [`bayes`]
//! dropout head with Beta-priored keep probabilities → Monte Carlo predictive
//! summary → [`calibration`] metrics. [`training`] fits the head and builds
//! the few-shot / hold-out / cross-validation splits, [`data_io`] owns the
//! on-disk formats and [`experiment`] wires everything into reproducible runs.

pub mod bayes;
pub mod calibration;
pub mod data_io;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod rng;
pub mod synthetic;
pub mod training;

pub use error::{Error, ErrorKind, Result};
