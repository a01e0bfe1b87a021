//! Floating-point reference networks: teacher and student graphs, the
//! parameter-free attention mechanism, pixel shuffle, re-parameterization
//! fusion, distillation loss, and the NMSE metric.

mod fuse;
mod graph;
mod loss;
mod ops;

pub use fuse::{fuse_rep_block, rep_block_forward, RepBlock};
pub use graph::{build_model, forward, forward_all, LayerGraph, ModelKind, Node, NodeOp, Src};
pub use loss::{attention_gradient_check, kd_loss, mse, nmse, nmse_db};
pub use ops::{
    attention_block_forward, conv2d_same, pixel_shuffle, relu, sigma_a, sigma_a_prime, ConvSpec,
    NetError,
};
