use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarBackward { shape: Vec<usize> },

    #[error("backward already ran on this graph; build a new graph or reset it")]
    BackwardTwice,

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("non-finite value in flow layer {layer}")]
    NonFiniteFlow { layer: usize },

    #[error("non-finite loss at time step {step}")]
    NonFiniteLoss { step: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("coupling layers need at least 2 dimensions (got {dim}); use a MAF layer for univariate data")]
    CouplingDimension { dim: usize },

    #[error("mask violates the autoregressive property: output {output} depends on input {input}")]
    MaskViolation { output: usize, input: usize },

    #[error("batch norm: {0}")]
    BatchNorm(String),

    #[error("flow stack is in {actual} mode, operation needs {expected} mode")]
    WrongMode {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("attention key dimension must be positive")]
    ZeroKeyDim,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("insufficient length: {0}")]
    InsufficientLength(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("covariates end at step {available}, forecast needs step {required}")]
    CovariateHorizon { available: usize, required: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}: {source}")]
    Diverged {
        epoch: usize,
        batch: usize,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
