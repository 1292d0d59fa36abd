//! Reverse-mode automatic differentiation over dense `f64` arrays.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{finite_difference_check, relative_error, FdReport, TensorReport, SMALL_GRADIENT};
pub use graph::{log_sum_exp, sigmoid, softmax_values, Elementwise, Graph, Var};
pub use tensor::Tensor;
