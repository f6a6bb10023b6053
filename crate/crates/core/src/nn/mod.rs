//! Minimal reverse-mode numeric core: tensors, the tape, layer primitives,
//! Adam and finite-difference checking.

mod adam;
pub mod gradcheck;
mod graph;
pub mod layers;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, primitive_suite, FD_STEP};
pub use graph::{Gradients, Graph, Var, PROB_EPS};
pub use layers::{
    conv_maxpool_forward, linear_forward, lstm_cell_step, softmax, ConvStack, Linear, Lstm,
    PATCH_SIZE,
};
pub use params::{Grads, ParamId, ParamStore};
pub use tensor::Tensor;
