//! Layer-level building blocks composed from the op catalog: projected
//! multi-head cross-attention, FiLM heads, the feed-forward block, and the
//! sinusoidal timestep embedding.

use crate::nn::graph::{Graph, NodeId};
use crate::nn::ops::{self, Unary};
use crate::nn::params::BoundParams;
use crate::nn::tensor::{Elem, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Linear layer by parameter path prefix: `{prefix}.weight` (d_in x d_out)
/// and `{prefix}.bias` (d_out).
pub fn linear_p<E: Elem>(g: &mut Graph<E>, bound: &BoundParams, prefix: &str, x: NodeId) -> NodeId {
    let w = bound.id(&format!("{prefix}.weight"));
    let b = bound.id(&format!("{prefix}.bias"));
    ops::linear(g, x, w, b)
}

/// Layer norm by prefix: `{prefix}.gamma`, `{prefix}.beta`.
pub fn layer_norm_p<E: Elem>(g: &mut Graph<E>, bound: &BoundParams, prefix: &str, x: NodeId) -> NodeId {
    let gamma = bound.id(&format!("{prefix}.gamma"));
    let beta = bound.id(&format!("{prefix}.beta"));
    ops::layer_norm(g, x, gamma, beta, LAYER_NORM_EPS)
}

/// Multi-head cross-attention with q/k/v/out projections under
/// `{prefix}.{q,k,v,out}`. Queries come from `x`, keys/values from `memory`.
#[allow(clippy::too_many_arguments)]
pub fn cross_attention_p<E: Elem>(
    g: &mut Graph<E>,
    bound: &BoundParams,
    prefix: &str,
    x: NodeId,
    memory: NodeId,
    heads: usize,
    dropout_p: f64,
    rng: Option<&mut dyn rand::RngCore>,
) -> NodeId {
    let q = linear_p(g, bound, &format!("{prefix}.q"), x);
    let k = linear_p(g, bound, &format!("{prefix}.k"), memory);
    let v = linear_p(g, bound, &format!("{prefix}.v"), memory);
    let o = ops::attention(g, q, k, v, heads, dropout_p, rng);
    linear_p(g, bound, &format!("{prefix}.out"), o)
}

/// Position-wise feed-forward: linear -> GELU -> dropout -> linear.
pub fn ffn_p<E: Elem>(
    g: &mut Graph<E>,
    bound: &BoundParams,
    prefix: &str,
    x: NodeId,
    dropout_p: f64,
    rng: Option<&mut dyn rand::RngCore>,
) -> NodeId {
    let h = linear_p(g, bound, &format!("{prefix}.fc1"), x);
    let h = ops::unary(g, Unary::Gelu, h);
    let h = match rng {
        Some(r) if dropout_p > 0.0 => ops::dropout(g, h, dropout_p, &mut rand_adapter(r)),
        _ => h,
    };
    linear_p(g, bound, &format!("{prefix}.fc2"), h)
}

struct RngAdapter<'a>(&'a mut dyn rand::RngCore);

impl rand::RngCore for RngAdapter<'_> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

fn rand_adapter(r: &mut dyn rand::RngCore) -> RngAdapter<'_> {
    RngAdapter(r)
}

/// FiLM whose per-channel scale/shift are linear heads of the timestep
/// embedding: `{prefix}.gamma_head`, `{prefix}.beta_head`. Zero-initialized
/// heads make this an identity.
pub fn film_p<E: Elem>(g: &mut Graph<E>, bound: &BoundParams, prefix: &str, x: NodeId, emb: NodeId) -> NodeId {
    let gamma = linear_p(g, bound, &format!("{prefix}.gamma_head"), emb);
    let beta = linear_p(g, bound, &format!("{prefix}.beta_head"), emb);
    ops::film(g, x, gamma, beta)
}

/// Raw sinusoidal embedding of an integer timestep: first half sines, second
/// half cosines, frequencies 10000^(-2i/d). ||emb||^2 = d/2 exactly.
pub fn timestep_embedding<E: Elem>(t: usize, d: usize) -> Tensor<E> {
    assert!(d % 2 == 0, "timestep embedding dim must be even");
    let half = d / 2;
    let mut data = vec![E::ZERO; d];
    for i in 0..half {
        let freq = (10000f64).powf(-2.0 * i as f64 / d as f64);
        let arg = t as f64 * freq;
        data[i] = E::from_f64(arg.sin());
        data[half + i] = E::from_f64(arg.cos());
    }
    Tensor::from_vec(vec![1, d], data)
}
