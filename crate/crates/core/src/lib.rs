//! Multivariate probabilistic time-series forecasting with conditional
//! normalizing flows.
//!
//! The emission distribution of the `D`-dimensional observation at each time
//! step is a stack of invertible layers (affine coupling or masked
//! autoregressive, interleaved with batch-norm bijections) conditioned on the
//! state of a recurrent network or of a causally masked attention
//! encoder-decoder. Training maximizes the exact log-likelihood; forecasts are
//! Monte-Carlo sample paths drawn by inverting the flow step by step.

pub mod error;
pub mod nn;
pub mod par;
pub mod tensor;

pub use error::{Error, Result};
pub mod conditioner;
pub mod data;
pub mod flow;
pub mod forecaster;
pub mod metrics;
