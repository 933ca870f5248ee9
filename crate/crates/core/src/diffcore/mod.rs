//! Dense tensors with reverse-mode differentiation and first-order
//! optimizers.

pub mod gradcheck;
mod kernels;
mod optim;
mod param;
mod pxg;
mod real;
mod tape;
mod tensor;

pub use optim::{Optimizer, OptimizerConfig};
pub use param::{ParamId, ParamStore, Parameter};
pub use pxg::{pxg_len, read_pxg, write_pxg, PXG_MAGIC};
pub use real::Real;
pub use tape::{softmax_slice, Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
