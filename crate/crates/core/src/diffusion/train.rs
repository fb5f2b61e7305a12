//! Training loop: sliding-window batches, Adam with decoupled weight decay,
//! EMA shadow parameters, and per-sample gradient evaluation parallelized
//! across the batch (summed in slot order, so runs are bit-reproducible
//! regardless of thread scheduling).

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{init_params, DenoiserBundle, DenoiserConfig};
use crate::error::{Error, Result};
use crate::kin::ops::{contact_labels, default_height_thresh, standardize, CONTACT_SPEED_THRESH};
use crate::kin::{fk::forward_kinematics, MotionSequence, NormStats, Skeleton};
use crate::nn::graph::Graph;
use crate::nn::params::{BoundParams, ParamSet};
use crate::nn::tensor::Tensor;

use super::losses::{build_loss_graph, LossBreakdown, LossFlags, LossInputs, LossWeights};
use super::schedule::{make_schedule, standard_normal, DiffusionSchedule};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Sliding-window length in frames.
    pub window: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    /// Probability of replacing the condition with the null memory.
    pub cond_drop: f64,
    pub seed: u64,
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub weights: LossWeights,
    pub flags: LossFlags,
    pub ckpt_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            window: 240,
            lr: 4e-4,
            weight_decay: 0.02,
            ema_decay: 0.9999,
            cond_drop: 0.2,
            seed: 42,
            t_steps: super::schedule::DEFAULT_T_STEPS,
            beta_start: super::schedule::DEFAULT_BETA_START,
            beta_end: super::schedule::DEFAULT_BETA_END,
            weights: LossWeights::default(),
            flags: LossFlags::default(),
            ckpt_every: 500,
            log_every: 50,
        }
    }
}

/// One aligned (music, motion) pair.
#[derive(Clone, Debug)]
pub struct TrainItem {
    /// T x 35.
    pub music: Tensor<f32>,
    pub motion: MotionSequence,
}

pub struct TrainOutcome {
    pub bundle: DenoiserBundle,
    pub ema: ParamSet<f32>,
    pub schedule: DiffusionSchedule,
    /// Batch-mean loss breakdown per step (1-indexed step, breakdown).
    pub history: Vec<(usize, LossBreakdown)>,
}

struct PreparedItem {
    /// Standardized motion + contacts, T x d_motion (pre-standardization
    /// happens after stats are fitted; this holds the raw flat first).
    flat: Vec<f32>,
    music: Tensor<f32>,
    n_frames: usize,
}

/// Flatten a motion to export layout + contact channels. Missing contacts on
/// a skeleton that defines them are derived from FK with the default
/// thresholds.
fn flat_with_contacts(skel: &Skeleton, motion: &MotionSequence) -> Result<Vec<f32>> {
    let k = skel.n_contacts();
    let flat = motion.flatten();
    if k == 0 {
        return Ok(flat);
    }
    let contacts = match &motion.contacts {
        Some(c) if c.len() == motion.n_frames * k => c.clone(),
        Some(_) => return Err(Error::ShapeError("contact channel count mismatch".into())),
        None => {
            let pos = forward_kinematics(skel, motion)?;
            contact_labels(&pos, motion.n_frames, skel, CONTACT_SPEED_THRESH, default_height_thresh(skel))?
        }
    };
    let d = skel.frame_dim();
    let mut out = Vec::with_capacity(motion.n_frames * (d + k));
    for t in 0..motion.n_frames {
        out.extend_from_slice(&flat[t * d..(t + 1) * d]);
        out.extend_from_slice(&contacts[t * k..(t + 1) * k]);
    }
    Ok(out)
}

struct AdamState {
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
    step: usize,
}

impl AdamState {
    fn new(params: &ParamSet<f32>) -> Self {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, t) in params.iter() {
            m.insert(name.clone(), vec![0.0; t.numel()]);
            v.insert(name.clone(), vec![0.0; t.numel()]);
        }
        Self { m, v, step: 0 }
    }

    /// AdamW: decoupled weight decay, beta1 = 0.9, beta2 = 0.999, eps 1e-8.
    fn update(&mut self, params: &mut ParamSet<f32>, grads: &BTreeMap<String, Vec<f32>>, lr: f64, wd: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let bc1 = 1.0 - B1.powi(self.step as i32);
        let bc2 = 1.0 - B2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let m = self.m.get_mut(name).unwrap();
            let v = self.v.get_mut(name).unwrap();
            let data = p.data_mut();
            for i in 0..data.len() {
                let gi = g[i] as f64;
                let mi = B1 * m[i] as f64 + (1.0 - B1) * gi;
                let vi = B2 * v[i] as f64 + (1.0 - B2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                let step = lr * (mhat / (vhat.sqrt() + EPS) + wd * data[i] as f64);
                data[i] = (data[i] as f64 - step) as f32;
            }
        }
    }
}

fn ema_update(shadow: &mut ParamSet<f32>, params: &ParamSet<f32>, decay: f64) {
    for ((sn, s), (pn, p)) in shadow.iter_mut().zip(params.iter()) {
        debug_assert_eq!(sn, pn);
        let sd = s.data_mut();
        for (sv, &pv) in sd.iter_mut().zip(p.data()) {
            *sv = (decay * *sv as f64 + (1.0 - decay) * pv as f64) as f32;
        }
    }
}

fn derive_rng(seed: u64, step: usize, slot: usize) -> ChaCha8Rng {
    // Distinct stream per (seed, step, slot), stable across platforms.
    let mix = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((step as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add((slot as u64).wrapping_mul(0x94d0_49bb_1331_11eb));
    ChaCha8Rng::seed_from_u64(mix)
}

/// Evaluate one sample's loss and parameter gradients.
#[allow(clippy::too_many_arguments)]
fn sample_grads(
    params: &ParamSet<f32>,
    config: &DenoiserConfig,
    skel: &Skeleton,
    stats: &NormStats,
    schedule: &DiffusionSchedule,
    weights: &LossWeights,
    flags: LossFlags,
    x_std: Tensor<f32>,
    music: Tensor<f32>,
    cond_drop: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(LossBreakdown, Vec<Vec<f32>>)> {
    let t = rng.gen_range(1..=schedule.t_steps);
    let eps = Tensor::from_vec(x_std.shape().to_vec(), standard_normal(x_std.numel(), rng));
    let use_null = rng.gen::<f64>() < cond_drop;
    let inputs = LossInputs { x_std, music, t, eps, use_null };

    let mut g = Graph::new(true);
    let bound = BoundParams::bind(&mut g, params);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let nodes = build_loss_graph(
        &mut g,
        &bound,
        config,
        skel,
        stats,
        schedule,
        weights,
        flags,
        &inputs,
        Some(&mut dropout_rng as &mut dyn RngCore),
    )?;
    let breakdown = nodes.breakdown(&g);
    let mut grads_out = Vec::with_capacity(params.len());
    let mut grads = g.backward(nodes.total);
    for (name, _) in params.iter() {
        let id = bound.id(name);
        match grads.take(id) {
            Some(t) => grads_out.push(t.data().to_vec()),
            None => grads_out.push(vec![0.0; params.get(name)?.numel()]),
        }
    }
    Ok((breakdown, grads_out))
}

/// Run the full loop. `on_checkpoint(step, bundle, ema)` fires every
/// `ckpt_every` steps and at the end; a non-finite loss aborts with an error
/// (the previous periodic checkpoint is the last good state).
pub fn train(
    items: &[TrainItem],
    skel: &Skeleton,
    config: &DenoiserConfig,
    tc: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &DenoiserBundle, &ParamSet<f32>) -> Result<()>,
) -> Result<TrainOutcome> {
    if items.is_empty() {
        return Err(Error::ConfigError("empty training dataset".into()));
    }
    config.validate()?;
    let d_motion = skel.frame_dim() + skel.n_contacts();
    if config.d_motion != d_motion {
        return Err(Error::ConfigError(format!(
            "config d_motion {} != skeleton frame dim {}",
            config.d_motion, d_motion
        )));
    }
    let schedule = make_schedule(tc.t_steps, tc.beta_start, tc.beta_end)?;

    // Flatten motions, derive contacts, fit standardization stats.
    let mut prepared = Vec::with_capacity(items.len());
    let mut all_frames: Vec<f32> = Vec::new();
    for item in items {
        let t_music = item.music.dims2().0;
        if t_music != item.motion.n_frames {
            return Err(Error::ShapeError(format!(
                "music has {t_music} frames, motion {}",
                item.motion.n_frames
            )));
        }
        if item.motion.n_frames < tc.window {
            return Err(Error::InputTooShort(format!(
                "item with {} frames is shorter than window {}",
                item.motion.n_frames, tc.window
            )));
        }
        let flat = flat_with_contacts(skel, &item.motion)?;
        all_frames.extend_from_slice(&flat);
        prepared.push(PreparedItem { flat, music: item.music.clone(), n_frames: item.motion.n_frames });
    }
    let stats = NormStats::fit(&all_frames, d_motion)?;
    for item in prepared.iter_mut() {
        item.flat = standardize(&item.flat, &stats)?;
    }
    drop(all_frames);

    let mut params: ParamSet<f32> = init_params(config, tc.seed)?;
    let mut ema = params.clone();
    let mut adam = AdamState::new(&params);
    let mut history = Vec::with_capacity(tc.steps);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_mul(0x5851_f42d_4c95_7f2d));

    for step in 1..=tc.steps {
        // Sample (item, offset) windows.
        let picks: Vec<(usize, usize)> = (0..tc.batch_size)
            .map(|_| {
                let idx = batch_rng.gen_range(0..prepared.len());
                let max_off = prepared[idx].n_frames - tc.window;
                let off = if max_off == 0 { 0 } else { batch_rng.gen_range(0..=max_off) };
                (idx, off)
            })
            .collect();

        let results: Vec<Result<(LossBreakdown, Vec<Vec<f32>>)>> = picks
            .par_iter()
            .enumerate()
            .map(|(slot, &(idx, off))| {
                let item = &prepared[idx];
                let x = Tensor::from_vec(
                    vec![tc.window, d_motion],
                    item.flat[off * d_motion..(off + tc.window) * d_motion].to_vec(),
                );
                let m = Tensor::from_vec(
                    vec![tc.window, 35],
                    item.music.data()[off * 35..(off + tc.window) * 35].to_vec(),
                );
                let mut rng = derive_rng(tc.seed, step, slot);
                sample_grads(
                    &params, config, skel, &stats, &schedule, &tc.weights, tc.flags, x, m,
                    tc.cond_drop, &mut rng,
                )
            })
            .collect();

        // Slot-ordered reduction keeps the sum deterministic.
        let mut mean = LossBreakdown::default();
        let mut grad_sum: Option<Vec<Vec<f32>>> = None;
        for r in results {
            let (b, g) = r?;
            mean.rec += b.rec;
            mean.hand += b.hand;
            mean.body += b.body;
            mean.unified += b.unified;
            mean.foot += b.foot;
            mean.total += b.total;
            match grad_sum.as_mut() {
                None => grad_sum = Some(g),
                Some(acc) => {
                    for (a, gi) in acc.iter_mut().zip(&g) {
                        for (av, &gv) in a.iter_mut().zip(gi) {
                            *av += gv;
                        }
                    }
                }
            }
        }
        let inv = 1.0 / tc.batch_size as f64;
        mean.rec *= inv;
        mean.hand *= inv;
        mean.body *= inv;
        mean.unified *= inv;
        mean.foot *= inv;
        mean.total *= inv;
        if !mean.total.is_finite() {
            return Err(Error::NumericalError(format!(
                "training diverged at step {step}; last periodic checkpoint is the last good state"
            )));
        }

        let mut grads: BTreeMap<String, Vec<f32>> = BTreeMap::new();
        for ((name, _), mut g) in params.iter().zip(grad_sum.unwrap()) {
            for v in g.iter_mut() {
                *v *= inv as f32;
            }
            grads.insert(name.clone(), g);
        }
        adam.update(&mut params, &grads, tc.lr, tc.weight_decay);
        ema_update(&mut ema, &params, tc.ema_decay);
        history.push((step, mean));

        if step % tc.ckpt_every == 0 && step != tc.steps {
            let bundle =
                DenoiserBundle { config: config.clone(), params: params.clone(), norm_stats: stats.clone() };
            on_checkpoint(step, &bundle, &ema)?;
        }
    }

    let bundle = DenoiserBundle { config: config.clone(), params, norm_stats: stats };
    on_checkpoint(tc.steps, &bundle, &ema)?;
    Ok(TrainOutcome { bundle, ema, schedule, history })
}

/// Batch-mean loss at fixed parameters, for evaluation and tests.
#[allow(clippy::too_many_arguments)]
pub fn eval_loss(
    params: &ParamSet<f32>,
    config: &DenoiserConfig,
    skel: &Skeleton,
    stats: &NormStats,
    schedule: &DiffusionSchedule,
    weights: &LossWeights,
    flags: LossFlags,
    x_std: Tensor<f32>,
    music: Tensor<f32>,
    t: usize,
    eps: Tensor<f32>,
    use_null: bool,
) -> Result<LossBreakdown> {
    let mut g = Graph::new(false);
    let bound = BoundParams::bind(&mut g, params);
    let inputs = LossInputs { x_std, music, t, eps, use_null };
    let nodes =
        build_loss_graph(&mut g, &bound, config, skel, stats, schedule, weights, flags, &inputs, None)?;
    Ok(nodes.breakdown(&g))
}
