//! Differentiable op catalog. Every op evaluates eagerly and registers a
//! hand-written reverse rule on the graph; `nn::gradcheck` is the arbiter.

mod elementwise;
mod linalg;
mod motion;
mod nn_layers;
mod scan;

pub use elementwise::{
    add, affine_cols, dropout, mean_all, mean_sq, mse, mul, scale, sigmoid, softplus, sub, sum_all, unary,
    Unary,
};
pub use linalg::{
    add_row, broadcast_row, concat_cols, gather_cols, linear, matmul, repeat_cols, reverse_rows, slice_cols,
    slice_rows,
};
pub use motion::{fk, gram_schmidt_frame, mask_replace, sixd_to_rotmat_batch, time_diff};
pub use nn_layers::{attention, conv1d_causal, film, layer_norm};
pub use scan::{discretize_a, discretize_b, fused_scan_forward, selective_scan};
