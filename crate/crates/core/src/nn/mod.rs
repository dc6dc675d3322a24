//! Differentiable building blocks with explicit forward caches and
//! hand-written backward passes.

mod linear;
mod norm;
mod ops;
mod param;

pub use linear::Linear;
pub use norm::{LayerNorm, LayerNormCache};
pub use ops::{
    dropout_mask, gelu, gelu_backward, log_softmax_rows, sigmoid, softmax_rows,
    softmax_rows_backward,
};
pub use param::{check_finite, join_path, normal_matrix, Param, Parameters};
