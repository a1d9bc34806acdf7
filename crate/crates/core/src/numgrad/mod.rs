//! Dense matrices and reverse-mode differentiation.

mod gradcheck;
mod graph;
mod matrix;

pub use gradcheck::{finite_diff_gradcheck, GradCheck, DEFAULT_STEP};
pub use graph::{log_softmax_rows, GradientMap, Graph, Tensor, NORM_EPS};
pub use matrix::Matrix;
