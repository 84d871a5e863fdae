//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Covers exactly the operation set the tracking pipeline needs: conv2d,
//! linear, bilinear sampling, softmax, a handful of elementwise ops, and
//! two fused loss kernels. Everything is f64 and runs on one thread.

mod gradcheck;
mod params;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport, ParamCheck};
pub use params::ParameterSet;
pub use tensor::{NumericsError, Result, Tensor};
