//! Minimal reverse-mode differentiation over dense `f64` tensors.

mod conv;
mod gradcheck;
mod graph;

pub use conv::{gemm, ConvGeometry};
pub use gradcheck::{analytic_gradient, gradient_check, gradient_check_coords, relative_error};
pub use graph::{Graph, Var};

#[cfg(test)]
pub(crate) use graph::block_dct;
pub(crate) use graph::DCT_BLOCK;
