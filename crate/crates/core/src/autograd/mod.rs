//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Only the operations needed by the three channel networks and the fusion
//! heads are provided: 1-D/2-D convolution, pooling, fully connected layers,
//! pointwise activations, dropout, concatenation, softmax blending and the
//! mean-squared-error objective.

mod adam;
mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, Probe, RELATIVE_FLOOR};
pub use graph::{mse, sigmoid, Gradients, Graph, Var};
pub use params::{glorot_uniform, he_uniform, ConvIds, DenseIds, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
