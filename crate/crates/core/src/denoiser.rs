//! The conditional denoiser: a music condition encoder (stacked BiMamba)
//! and a generator of stacked blocks, each
//!   residual BiMamba -> FiLM(t) -> residual cross-attention over the music
//!   memory -> residual FFN -> FiLM(t),
//! predicting the clean motion (x0 parameterization) in standardized space.
//! No positional encoding anywhere: order information enters only through
//! the state-space recurrences, which is what lets a model trained on short
//! windows run one-shot at much longer lengths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kin::NormStats;
use crate::nn::graph::{Graph, NodeId};
use crate::nn::layers::{
    cross_attention_p, ffn_p, film_p, layer_norm_p, linear_p, timestep_embedding,
};
use crate::nn::ops::{self, Unary};
use crate::nn::params::{uniform_linear_init, BoundParams, ParamSet};
use crate::nn::tensor::{Elem, Tensor};
use crate::ssm::{self, SsmDims};

/// Temporal backbone choice; `Attention` swaps every BiMamba for an
/// equal-width self-attention layer (ablation / efficiency comparison).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    #[default]
    Bimamba,
    Attention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub d_model: usize,
    /// Condition-encoder depth L_m.
    pub n_cond_layers: usize,
    /// Generator depth L_c.
    pub n_blocks: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub ssm: SsmDims,
    /// Motion width the diffusion runs over: 3 + 6J + contact channels.
    pub d_motion: usize,
    pub d_music: usize,
    /// Diffusion timestep count T_max.
    pub t_max: usize,
    /// False reproduces the unidirectional-Mamba ablation.
    pub bidirectional: bool,
    pub backbone: Backbone,
}

impl DenoiserConfig {
    /// Full-scale configuration.
    pub fn full(d_motion: usize) -> Self {
        Self {
            d_model: 512,
            n_cond_layers: 2,
            n_blocks: 8,
            heads: 4,
            ffn_dim: 1024,
            dropout: 0.1,
            ssm: SsmDims::default(),
            d_motion,
            d_music: crate::dsp::FEATURE_DIM,
            t_max: 1000,
            bidirectional: true,
            backbone: Backbone::Bimamba,
        }
    }

    /// Desk-scale configuration used by the toy experiments.
    pub fn toy(d_motion: usize) -> Self {
        Self {
            d_model: 64,
            n_cond_layers: 2,
            n_blocks: 2,
            heads: 4,
            ffn_dim: 128,
            dropout: 0.1,
            ssm: SsmDims::default(),
            d_motion,
            d_music: crate::dsp::FEATURE_DIM,
            t_max: 1000,
            bidirectional: true,
            backbone: Backbone::Bimamba,
        }
    }

    /// Minimal configuration for latency benchmarking.
    pub fn bench(d_motion: usize) -> Self {
        Self {
            d_model: 32,
            n_cond_layers: 1,
            n_blocks: 1,
            heads: 4,
            ffn_dim: 64,
            dropout: 0.0,
            ssm: SsmDims::default(),
            d_motion,
            d_music: crate::dsp::FEATURE_DIM,
            t_max: 1000,
            bidirectional: true,
            backbone: Backbone::Bimamba,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_motion == 0 || self.d_music == 0 {
            return Err(Error::ConfigError("zero dimension in denoiser config".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::ConfigError(format!(
                "heads {} must divide d_model {}",
                self.heads, self.d_model
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::ConfigError("d_model must be even for the sinusoidal embedding".into()));
        }
        if self.t_max == 0 || self.n_blocks == 0 {
            return Err(Error::ConfigError("t_max and n_blocks must be positive".into()));
        }
        Ok(())
    }
}

fn init_linear<E: Elem>(
    params: &mut ParamSet<E>,
    rng: &mut impl Rng,
    prefix: &str,
    d_in: usize,
    d_out: usize,
) {
    params.insert(format!("{prefix}.weight"), uniform_linear_init(rng, d_in, d_out));
    params.insert(format!("{prefix}.bias"), Tensor::zeros(vec![d_out]));
}

fn init_norm<E: Elem>(params: &mut ParamSet<E>, prefix: &str, d: usize) {
    params.insert(format!("{prefix}.gamma"), Tensor::full(vec![d], E::ONE));
    params.insert(format!("{prefix}.beta"), Tensor::zeros(vec![d]));
}

fn init_zero_linear<E: Elem>(params: &mut ParamSet<E>, prefix: &str, d_in: usize, d_out: usize) {
    params.insert(format!("{prefix}.weight"), Tensor::zeros(vec![d_in, d_out]));
    params.insert(format!("{prefix}.bias"), Tensor::zeros(vec![d_out]));
}

fn init_attention<E: Elem>(params: &mut ParamSet<E>, rng: &mut impl Rng, prefix: &str, d: usize) {
    for part in ["q", "k", "v", "out"] {
        init_linear(params, rng, &format!("{prefix}.{part}"), d, d);
    }
}

fn init_temporal<E: Elem>(
    params: &mut ParamSet<E>,
    rng: &mut impl Rng,
    prefix: &str,
    config: &DenoiserConfig,
) {
    match config.backbone {
        Backbone::Bimamba => ssm::init_bimamba(params, rng, prefix, config.d_model, config.ssm),
        Backbone::Attention => init_attention(params, rng, prefix, config.d_model),
    }
}

/// Deterministic parameter init: same (config, seed) gives bit-identical
/// parameters. The output head is zero-initialized so the denoiser predicts
/// exactly zero at step zero; FiLM heads start as identities.
pub fn init_params<E: Elem>(config: &DenoiserConfig, seed: u64) -> Result<ParamSet<E>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let d = config.d_model;
    let mut p = ParamSet::new();

    init_linear(&mut p, rng, "music_in_proj", config.d_music, d);
    for i in 0..config.n_cond_layers {
        init_norm(&mut p, &format!("cond.{i}.norm"), d);
        init_temporal(&mut p, rng, &format!("cond.{i}.temporal"), config);
    }
    init_norm(&mut p, "cond.out_norm", d);

    init_linear(&mut p, rng, "time_mlp.fc1", d, d);
    init_linear(&mut p, rng, "time_mlp.fc2", d, d);

    init_linear(&mut p, rng, "motion_in_proj", config.d_motion, d);
    for i in 0..config.n_blocks {
        let b = format!("blocks.{i}");
        init_norm(&mut p, &format!("{b}.norm1"), d);
        init_temporal(&mut p, rng, &format!("{b}.temporal"), config);
        init_zero_linear(&mut p, &format!("{b}.film1.gamma_head"), d, d);
        init_zero_linear(&mut p, &format!("{b}.film1.beta_head"), d, d);
        init_norm(&mut p, &format!("{b}.norm2"), d);
        init_attention(&mut p, rng, &format!("{b}.attn"), d);
        init_norm(&mut p, &format!("{b}.norm3"), d);
        init_linear(&mut p, rng, &format!("{b}.ffn.fc1"), d, config.ffn_dim);
        init_linear(&mut p, rng, &format!("{b}.ffn.fc2"), config.ffn_dim, d);
        init_zero_linear(&mut p, &format!("{b}.film2.gamma_head"), d, d);
        init_zero_linear(&mut p, &format!("{b}.film2.beta_head"), d, d);
    }
    init_zero_linear(&mut p, "out_proj", d, config.d_motion);
    let null: Vec<E> = (0..d).map(|_| E::from_f64(rng.gen_range(-0.02..0.02))).collect();
    p.insert("null_cond", Tensor::from_vec(vec![1, d], null));
    Ok(p)
}

fn reb<'s>(rng: &'s mut Option<&mut dyn rand::RngCore>) -> Option<&'s mut dyn rand::RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

fn temporal_layer<E: Elem>(
    g: &mut Graph<E>,
    bound: &BoundParams,
    prefix: &str,
    x: NodeId,
    config: &DenoiserConfig,
    dropout_p: f64,
    rng: Option<&mut dyn rand::RngCore>,
) -> NodeId {
    match config.backbone {
        Backbone::Bimamba => ssm::bimamba(g, bound, prefix, x, config.ssm, config.bidirectional),
        Backbone::Attention => {
            cross_attention_p(g, bound, prefix, x, x, config.heads, dropout_p, rng)
        }
    }
}

/// Encode raw music features into the cross-attention memory: input
/// projection, pre-norm residual temporal layers, and a final layer norm.
pub fn encode_condition<E: Elem>(
    g: &mut Graph<E>,
    bound: &BoundParams,
    config: &DenoiserConfig,
    music: NodeId,
) -> Result<NodeId> {
    let (_, dm) = g.value(music).dims2();
    if dm != config.d_music {
        return Err(Error::ShapeError(format!("music width {dm}, expected {}", config.d_music)));
    }
    let mut h = linear_p(g, bound, "music_in_proj", music);
    for i in 0..config.n_cond_layers {
        let normed = layer_norm_p(g, bound, &format!("cond.{i}.norm"), h);
        let branch = temporal_layer(g, bound, &format!("cond.{i}.temporal"), normed, config, 0.0, None);
        h = ops::add(g, h, branch);
    }
    Ok(layer_norm_p(g, bound, "cond.out_norm", h))
}

/// The learned unconditional memory, broadcast to `t_frames`.
pub fn null_condition<E: Elem>(
    g: &mut Graph<E>,
    bound: &BoundParams,
    t_frames: usize,
) -> NodeId {
    let null = bound.id("null_cond");
    ops::broadcast_row(g, null, t_frames)
}

/// Shared timestep embedding: raw sinusoid through a 2-layer SiLU MLP.
fn time_embedding<E: Elem>(
    g: &mut Graph<E>,
    bound: &BoundParams,
    config: &DenoiserConfig,
    t_step: usize,
) -> NodeId {
    let raw = g.constant(timestep_embedding::<E>(t_step, config.d_model));
    let h = linear_p(g, bound, "time_mlp.fc1", raw);
    let h = ops::unary(g, Unary::Silu, h);
    linear_p(g, bound, "time_mlp.fc2", h)
}

/// Predict the clean sample from a noisy one (standardized domain, contact
/// logits in the trailing channels). `rng` enables dropout (training mode).
pub fn denoise<E: Elem>(
    g: &mut Graph<E>,
    bound: &BoundParams,
    config: &DenoiserConfig,
    z: NodeId,
    t_step: usize,
    memory: NodeId,
    mut rng: Option<&mut dyn rand::RngCore>,
) -> Result<NodeId> {
    let (tz, dz) = g.value(z).dims2();
    if dz != config.d_motion {
        return Err(Error::ShapeError(format!("motion width {dz}, expected {}", config.d_motion)));
    }
    let (tm, dmem) = g.value(memory).dims2();
    if tm != tz || dmem != config.d_model {
        return Err(Error::ShapeError(format!(
            "memory {tm}x{dmem} does not match motion {tz} frames at d_model {}",
            config.d_model
        )));
    }
    if t_step == 0 || t_step > config.t_max {
        return Err(Error::ConfigError(format!("timestep {t_step} outside 1..={}", config.t_max)));
    }
    let dropout_p = if rng.is_some() { config.dropout } else { 0.0 };
    let temb = time_embedding(g, bound, config, t_step);

    let mut h = linear_p(g, bound, "motion_in_proj", z);
    for i in 0..config.n_blocks {
        let b = format!("blocks.{i}");
        let normed = layer_norm_p(g, bound, &format!("{b}.norm1"), h);
        let branch = temporal_layer(
            g,
            bound,
            &format!("{b}.temporal"),
            normed,
            config,
            dropout_p,
            reb(&mut rng),
        );
        h = ops::add(g, h, branch);
        h = film_p(g, bound, &format!("{b}.film1"), h, temb);

        let normed = layer_norm_p(g, bound, &format!("{b}.norm2"), h);
        let branch = cross_attention_p(
            g,
            bound,
            &format!("{b}.attn"),
            normed,
            memory,
            config.heads,
            dropout_p,
            reb(&mut rng),
        );
        h = ops::add(g, h, branch);

        let normed = layer_norm_p(g, bound, &format!("{b}.norm3"), h);
        let branch = ffn_p(g, bound, &format!("{b}.ffn"), normed, dropout_p, reb(&mut rng));
        h = ops::add(g, h, branch);
        h = film_p(g, bound, &format!("{b}.film2"), h, temb);
    }
    Ok(linear_p(g, bound, "out_proj", h))
}

/// Just the temporal backbone stack (the sub-layers the backbone choice
/// swaps): n_blocks temporal layers applied in sequence. This is what the
/// scaling-exponent comparison times, isolated from the shared
/// cross-attention and FFN work.
pub fn backbone_forward<E: Elem>(
    g: &mut Graph<E>,
    bound: &BoundParams,
    config: &DenoiserConfig,
    x: NodeId,
) -> NodeId {
    let mut h = x;
    for i in 0..config.n_blocks {
        h = temporal_layer(g, bound, &format!("blocks.{i}.temporal"), h, config, 0.0, None);
    }
    h
}

/// Inference-only wrapper that owns throwaway graphs.
pub struct DenoiserEval<'a, E: Elem> {
    pub config: &'a DenoiserConfig,
    pub params: &'a ParamSet<E>,
}

impl<'a, E: Elem> DenoiserEval<'a, E> {
    pub fn new(config: &'a DenoiserConfig, params: &'a ParamSet<E>) -> Self {
        Self { config, params }
    }

    pub fn encode(&self, music: &Tensor<E>) -> Result<Tensor<E>> {
        let mut g = Graph::new(false);
        let bound = BoundParams::bind(&mut g, self.params);
        let m = g.constant(music.clone());
        let mem = encode_condition(&mut g, &bound, self.config, m)?;
        Ok(g.value(mem).clone())
    }

    pub fn null_memory(&self, t_frames: usize) -> Tensor<E> {
        let mut g = Graph::new(false);
        let bound = BoundParams::bind(&mut g, self.params);
        let mem = null_condition(&mut g, &bound, t_frames);
        g.value(mem).clone()
    }

    pub fn denoise(&self, z: &Tensor<E>, t_step: usize, memory: &Tensor<E>) -> Result<Tensor<E>> {
        let mut g = Graph::new(false);
        let bound = BoundParams::bind(&mut g, self.params);
        let zn = g.constant(z.clone());
        let mn = g.constant(memory.clone());
        let out = denoise(&mut g, &bound, self.config, zn, t_step, mn, None)?;
        Ok(g.value(out).clone())
    }
}

/// Everything a trained model needs at inference time.
#[derive(Clone, Debug)]
pub struct DenoiserBundle {
    pub config: DenoiserConfig,
    pub params: ParamSet<f32>,
    pub norm_stats: NormStats,
}
