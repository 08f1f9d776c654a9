//! Minimal reverse-mode differentiation over dense 64-bit arrays.
//!
//! The op set is exactly what the convolutional encoder/decoder and the
//! loss terms need: conv1d, transposed conv1d, affine maps, batch-norm,
//! relu/softplus/sigmoid, max-pool, factor-2 upsampling, elementwise
//! arithmetic, reductions and channel concatenation.

pub mod checkpoint;
mod fd;
mod graph;
pub mod kernels;
mod params;
mod tensor;

pub use checkpoint::Checkpoint;
pub use fd::{finite_difference_grad, grad_agreement};
pub use graph::{
    apply_bn_updates, scalar, BnUpdate, Gradients, Graph, Mode, NodeId, UpsampleMode, BN_EPS,
};
pub use params::{AdamConfig, AdamState, ParamId, ParamStore};
pub use tensor::Tensor;
