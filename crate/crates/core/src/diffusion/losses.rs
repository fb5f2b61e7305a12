//! The weighted training objective: reconstruction in parameter space plus
//! hand/body-decomposed forward-kinematic position (and velocity) terms and
//! the foot-sliding contact term. Ground-truth sides run through the plain
//! `kin` path; predicted sides run through the differentiable op catalog.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::denoiser::{denoise, encode_condition, null_condition, DenoiserConfig};
use crate::error::{Error, Result};
use crate::kin::ops::{mask_part, velocity, PartGroup};
use crate::kin::rotation::IDENTITY_6D;
use crate::kin::{fk::forward_kinematics, MotionSequence, NormStats, Skeleton};
use crate::nn::graph::{Graph, NodeId};
use crate::nn::ops::{self, Unary};
use crate::nn::params::BoundParams;
use crate::nn::tensor::{Elem, Tensor};

use super::schedule::DiffusionSchedule;

/// Loss weights; defaults follow the training recipe.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct LossWeights {
    pub rec: f64,
    pub hand: f64,
    pub body: f64,
    pub foot: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { rec: 0.636, hand: 0.636, body: 0.636, foot: 10.942 }
    }
}

/// Ablation switches: `vel_on = false` drops the velocity terms ("w/o Vel");
/// `fk_decomposed = false` collapses hand+body into one unified FK loss over
/// all joints with weight hand+body ("Naive FK").
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct LossFlags {
    pub vel_on: bool,
    pub fk_decomposed: bool,
}

impl Default for LossFlags {
    fn default() -> Self {
        Self { vel_on: true, fk_decomposed: true }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub hand: f64,
    pub body: f64,
    /// Unified FK term, used only when fk_decomposed is off.
    pub unified: f64,
    pub foot: f64,
    pub total: f64,
}

/// Deterministic inputs for one loss evaluation (the stochastic pieces are
/// sampled by the caller so gradients can be finite-difference checked).
#[derive(Clone, Debug)]
pub struct LossInputs<E: Elem> {
    /// Standardized motion with contact channels appended, T x d_motion.
    pub x_std: Tensor<E>,
    /// Aligned music features, T x 35.
    pub music: Tensor<E>,
    pub t: usize,
    /// Standard-normal noise, same shape as x_std.
    pub eps: Tensor<E>,
    /// Replace the conditioning with the learned null memory.
    pub use_null: bool,
}

pub struct LossNodes {
    pub rec: NodeId,
    pub hand: Option<NodeId>,
    pub body: Option<NodeId>,
    pub unified: Option<NodeId>,
    pub foot: Option<NodeId>,
    pub total: NodeId,
}

/// Identity-6D replacement columns for joints outside `kept`.
fn mask_replacement<E: Elem>(n_joints: usize, kept: &[usize]) -> Vec<Option<E>> {
    let mut keep = vec![false; n_joints];
    for &j in kept {
        keep[j] = true;
    }
    let mut repl = Vec::with_capacity(n_joints * 6);
    for (j, &k) in keep.iter().enumerate().take(n_joints) {
        let _ = j;
        for c in 0..6 {
            repl.push(if k { None } else { Some(E::from_f64(IDENTITY_6D[c])) });
        }
    }
    repl
}

/// Rebuild the ground-truth motion (+contacts) from its standardized form.
fn motion_from_std(
    x_std: &[f32],
    skel: &Skeleton,
    stats: &NormStats,
    fps: u32,
) -> Result<(MotionSequence, Option<Vec<f32>>)> {
    let d_motion = stats.dim();
    let k = skel.n_contacts();
    let d_export = skel.frame_dim();
    if d_motion != d_export + k {
        return Err(Error::ShapeError(format!(
            "stats dim {d_motion} != export {d_export} + contacts {k}"
        )));
    }
    let raw = crate::kin::ops::destandardize(x_std, stats)?;
    let t = raw.len() / d_motion;
    let mut flat = Vec::with_capacity(t * d_export);
    let mut contacts = if k > 0 { Some(Vec::with_capacity(t * k)) } else { None };
    for row in raw.chunks_exact(d_motion) {
        flat.extend_from_slice(&row[..d_export]);
        if let Some(c) = contacts.as_mut() {
            // GT contacts are 0/1 but standardization round-trips through f32.
            c.extend(row[d_export..].iter().map(|v| v.clamp(0.0, 1.0)));
        }
    }
    let motion = MotionSequence::from_flat(&flat, skel.n_joints(), fps, None)?;
    Ok((motion, contacts))
}

struct GtSides<E: Elem> {
    hand_pos: Option<Tensor<E>>,
    hand_vel: Option<Tensor<E>>,
    body_pos: Option<Tensor<E>>,
    body_vel: Option<Tensor<E>>,
    full_pos: Option<Tensor<E>>,
    full_vel: Option<Tensor<E>>,
}

fn gt_fk_sides<E: Elem>(
    skel: &Skeleton,
    motion: &MotionSequence,
    flags: LossFlags,
) -> Result<GtSides<E>> {
    let t = motion.n_frames;
    let j = skel.n_joints();
    let to_tensor = |pos: Vec<f64>, rows: usize| {
        Tensor::from_vec(vec![rows, j * 3], pos.iter().map(|&v| E::from_f64(v)).collect())
    };
    let mut sides = GtSides {
        hand_pos: None,
        hand_vel: None,
        body_pos: None,
        body_vel: None,
        full_pos: None,
        full_vel: None,
    };
    if flags.fk_decomposed {
        for group in [PartGroup::Hand, PartGroup::Body] {
            let masked = mask_part(skel, motion, group)?;
            let pos = forward_kinematics(skel, &masked)?;
            let vel = if flags.vel_on { Some(velocity(&pos, t)?) } else { None };
            match group {
                PartGroup::Hand => {
                    sides.hand_pos = Some(to_tensor(pos, t));
                    sides.hand_vel = vel.map(|v| to_tensor(v, t - 1));
                }
                PartGroup::Body => {
                    sides.body_pos = Some(to_tensor(pos, t));
                    sides.body_vel = vel.map(|v| to_tensor(v, t - 1));
                }
            }
        }
    } else {
        let pos = forward_kinematics(skel, motion)?;
        if flags.vel_on {
            sides.full_vel = Some(to_tensor(velocity(&pos, t)?, t - 1));
        }
        sides.full_pos = Some(to_tensor(pos, t));
    }
    Ok(sides)
}

/// Assemble the full loss graph. Gradients flow into every model parameter;
/// ground truth enters as constants.
#[allow(clippy::too_many_arguments)]
pub fn build_loss_graph<E: Elem>(
    g: &mut Graph<E>,
    bound: &BoundParams,
    config: &DenoiserConfig,
    skel: &Skeleton,
    stats: &NormStats,
    schedule: &DiffusionSchedule,
    weights: &LossWeights,
    flags: LossFlags,
    inputs: &LossInputs<E>,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<LossNodes> {
    schedule.check_t(inputs.t)?;
    let (t_frames, d_motion) = inputs.x_std.dims2();
    if d_motion != config.d_motion {
        return Err(Error::ShapeError(format!(
            "motion width {d_motion} does not match config {}",
            config.d_motion
        )));
    }

    // Forward-noise the target.
    let sa = E::from_f64(schedule.sqrt_alpha_bar(inputs.t));
    let sb = E::from_f64(schedule.sqrt_one_minus_alpha_bar(inputs.t));
    let z_data: Vec<E> = inputs
        .x_std
        .data()
        .iter()
        .zip(inputs.eps.data())
        .map(|(&x, &e)| sa * x + sb * e)
        .collect();
    let z = g.constant(Tensor::from_vec(vec![t_frames, d_motion], z_data));

    let memory = if inputs.use_null {
        null_condition(g, bound, t_frames)
    } else {
        let m = g.constant(inputs.music.clone());
        encode_condition(g, bound, config, m)?
    };
    let out = denoise(g, bound, config, z, inputs.t, memory, rng.take())?;
    loss_terms(g, out, &inputs.x_std, skel, stats, weights, flags)
}

/// The loss arithmetic given a prediction node (testable with an oracle
/// substitution in place of the network output).
pub fn loss_terms<E: Elem>(
    g: &mut Graph<E>,
    out: NodeId,
    x_std: &Tensor<E>,
    skel: &Skeleton,
    stats: &NormStats,
    weights: &LossWeights,
    flags: LossFlags,
) -> Result<LossNodes> {
    let (t_frames, d_motion) = x_std.dims2();
    if stats.dim() != d_motion {
        return Err(Error::ShapeError(format!(
            "motion width {d_motion} does not match stats {}",
            stats.dim()
        )));
    }
    if t_frames < 2 {
        return Err(Error::InputTooShort("loss needs at least two frames".into()));
    }
    let j = skel.n_joints();
    let k = skel.n_contacts();
    let d_export = skel.frame_dim();

    // Ground-truth sides through the plain kinematics path.
    let x_std_f32: Vec<f32> = x_std.data().iter().map(|v| v.to_f64() as f32).collect();
    let (gt_motion, _) = motion_from_std(&x_std_f32, skel, stats, 30)?;
    let gt = gt_fk_sides::<E>(skel, &gt_motion, flags)?;

    let x_const = g.constant(x_std.clone());
    let rec = ops::mse(g, out, x_const);

    // Destandardize, then split translation / rotations / contact logits.
    let scale: Vec<E> = stats.std.iter().map(|&s| E::from_f64(s as f64)).collect();
    let shift: Vec<E> = stats.mean.iter().map(|&m| E::from_f64(m as f64)).collect();
    let raw = ops::affine_cols(g, out, &scale, &shift);
    let tau = ops::slice_cols(g, raw, 0, 3);
    let rot = ops::slice_cols(g, raw, 3, 6 * j);
    let parents = skel.parent_indices();
    let offsets: Vec<[E; 3]> =
        skel.offsets().iter().map(|o| [E::from_f64(o[0]), E::from_f64(o[1]), E::from_f64(o[2])]).collect();

    let fk_of = |g: &mut Graph<E>, rot6: NodeId, tau: NodeId| {
        let rotm = ops::sixd_to_rotmat_batch(g, rot6, j);
        ops::fk(g, rotm, tau, &parents, &offsets)
    };

    let mut hand = None;
    let mut body = None;
    let mut unified = None;
    let mut foot = None;
    let mut full_pos_node = None;

    if flags.fk_decomposed {
        for group in [PartGroup::Hand, PartGroup::Body] {
            let kept = skel.group(group.name())?;
            let repl = mask_replacement::<E>(j, kept);
            let rot_masked = ops::mask_replace(g, rot, &repl);
            let tau_masked = if group == PartGroup::Hand {
                ops::mask_replace(g, tau, &[Some(E::ZERO), Some(E::ZERO), Some(E::ZERO)])
            } else {
                tau
            };
            let pos = fk_of(g, rot_masked, tau_masked);
            let (gt_pos, gt_vel) = match group {
                PartGroup::Hand => (gt.hand_pos.as_ref().unwrap(), gt.hand_vel.as_ref()),
                PartGroup::Body => (gt.body_pos.as_ref().unwrap(), gt.body_vel.as_ref()),
            };
            let gt_node = g.constant(gt_pos.clone());
            let mut term = ops::mse(g, pos, gt_node);
            if let Some(gv) = gt_vel {
                let vel = ops::time_diff(g, pos);
                let gvn = g.constant(gv.clone());
                let vterm = ops::mse(g, vel, gvn);
                term = ops::add(g, term, vterm);
            }
            match group {
                PartGroup::Hand => hand = Some(term),
                PartGroup::Body => body = Some(term),
            }
        }
        if k > 0 {
            full_pos_node = Some(fk_of(g, rot, tau));
        }
    } else {
        let pos = fk_of(g, rot, tau);
        full_pos_node = Some(pos);
        let gt_node = g.constant(gt.full_pos.as_ref().unwrap().clone());
        let mut term = ops::mse(g, pos, gt_node);
        if let Some(gv) = gt.full_vel.as_ref() {
            let vel = ops::time_diff(g, pos);
            let gvn = g.constant(gv.clone());
            let vterm = ops::mse(g, vel, gvn);
            term = ops::add(g, term, vterm);
        }
        unified = Some(term);
    }

    if k > 0 {
        // Foot sliding: predicted contact probabilities gate the predicted
        // contact-joint velocities.
        let logits = ops::slice_cols(g, raw, d_export, k);
        let probs = ops::unary(g, Unary::Sigmoid, logits);
        let probs = ops::slice_rows(g, probs, 0, t_frames - 1);
        let probs3 = ops::repeat_cols(g, probs, 3);
        let full_pos = full_pos_node.expect("full FK computed when contacts exist");
        let vel = ops::time_diff(g, full_pos);
        let cols: Vec<usize> =
            skel.contact_joints.iter().flat_map(|&cj| (0..3).map(move |a| cj * 3 + a)).collect();
        let vsel = ops::gather_cols(g, vel, &cols);
        let gated = ops::mul(g, vsel, probs3);
        foot = Some(ops::mean_sq(g, gated));
    }

    // Weighted sum.
    let mut total = ops::scale(g, rec, E::from_f64(weights.rec));
    let add_term = |g: &mut Graph<E>, node: Option<NodeId>, w: f64, total: NodeId| -> NodeId {
        match node {
            Some(n) => {
                let scaled = ops::scale(g, n, E::from_f64(w));
                ops::add(g, total, scaled)
            }
            None => total,
        }
    };
    total = add_term(g, hand, weights.hand, total);
    total = add_term(g, body, weights.body, total);
    total = add_term(g, unified, weights.hand + weights.body, total);
    total = add_term(g, foot, weights.foot, total);

    let nodes = LossNodes { rec, hand, body, unified, foot, total };
    // Surface non-finite terms with their name.
    for (name, id) in [
        ("rec", Some(nodes.rec)),
        ("hand", nodes.hand),
        ("body", nodes.body),
        ("unified", nodes.unified),
        ("foot", nodes.foot),
        ("total", Some(nodes.total)),
    ] {
        if let Some(id) = id {
            if !g.value(id).scalar_value().is_finite() {
                return Err(Error::NumericalError(format!("loss term '{name}' is non-finite")));
            }
        }
    }
    Ok(nodes)
}

impl LossNodes {
    pub fn breakdown<E: Elem>(&self, g: &Graph<E>) -> LossBreakdown {
        let val = |id: Option<NodeId>| id.map(|i| g.value(i).scalar_value().to_f64()).unwrap_or(0.0);
        LossBreakdown {
            rec: g.value(self.rec).scalar_value().to_f64(),
            hand: val(self.hand),
            body: val(self.body),
            unified: val(self.unified),
            foot: val(self.foot),
            total: g.value(self.total).scalar_value().to_f64(),
        }
    }
}
