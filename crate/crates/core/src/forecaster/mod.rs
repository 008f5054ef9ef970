//! Model assembly, windowed maximum-likelihood training and trajectory
//! sampling.

pub mod checkpoint;
mod model;
mod predict;
mod samples;
mod train;

pub use model::{Conditioner, Model, ModelConfig, ModelKind, ScaleVector, Window, SCALE_FLOOR};
pub use predict::{predict, Sampler};
pub use samples::{empirical_quantile, ForecastSamples};
pub use train::{epoch_rng, loss_trace_csv, train, EpochLoss, TrainConfig};
