//! Dense tensors, a reverse-mode differentiation tape, and the layer
//! primitives shared by the classifier and the forecaster.

mod graph;
mod lstm;
mod params;
mod tensor;

pub use graph::{conv_out_extent, Activation, Gradients, Graph, Var};
pub use lstm::{lstm_cell, LstmVars, LstmWeights};
pub use params::{clip_grad_norm, sgd_step, Bound, ParamSet, Precision, FORMAT_VERSION};
pub use tensor::Tensor;
