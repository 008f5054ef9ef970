//! Sequence encoders that summarize past observations and covariates into
//! the conditioning vector `h_t` consumed by the flow.

mod attention;
mod rnn;

pub use attention::{
    scaled_dot_product, AttentionConditioner, AttentionConfig, MultiHeadAttention,
};
pub use rnn::{CellKind, RecurrentConditioner, RnnState};
