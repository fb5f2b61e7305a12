//! Tensor type, reverse-mode graph, differentiable op catalog, layer
//! helpers, and the finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod ops;
pub mod params;
pub mod tensor;

pub use graph::{Graph, NodeId};
pub use params::{BoundParams, ParamSet};
pub use tensor::{Elem, Tensor};
