//! Dense tensors, a reverse-mode tape, and the graph/temporal layers built on it.

mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use layers::{
    aspp_forward, gat_attention, gat_forward, gcn_forward, layer_norm, temporal_conv, Activation, AsppBlock,
    ConvMode, GatHead, GatLayer, GcnLayer, GraphContext, TemporalConv, ASPP_DILATIONS, LN_EPS,
};
pub use optim::{Adam, AdamConfig};
pub use params::{glorot_uniform, Bound, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mask selects no elements")]
    EmptyMask,
    #[error("window too small: need at least {required} time steps, got {got}")]
    WindowTooSmall { required: usize, got: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error: {0}")]
    Io(String),
}
