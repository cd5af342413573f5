//! Minimal neural-network stack: reverse-mode autodiff over matrices,
//! linear/MLP/set-attention blocks, AdamW, and plain-text checkpoints.
//!
//! Everything runs in f64 and is deterministic given the initialization
//! seed; training and inference share one set of numeric kernels.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod linalg;
pub mod tape;

pub use adam::AdamW;
pub use layers::{Activation, Linear, Mlp, MultiHeadAttention, SetBlock};
pub use linalg::Mat;
pub use tape::{Init, NodeId, ParamId, ParamStore, Tape};
