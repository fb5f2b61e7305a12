//! Part masking, velocities, contact labels, and standardization.

use crate::error::{Error, Result};
use crate::kin::{rotation, MotionSequence, NormStats, Skeleton};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartGroup {
    Hand,
    Body,
}

impl PartGroup {
    pub fn name(self) -> &'static str {
        match self {
            PartGroup::Hand => "hand",
            PartGroup::Body => "body",
        }
    }
}

/// Keep only the chosen part: rotations of joints outside the group become
/// the identity 6D value; root translation is zeroed for the hand mask and
/// kept for the body mask. Kept joints are bit-identical.
pub fn mask_part(skel: &Skeleton, motion: &MotionSequence, group: PartGroup) -> Result<MotionSequence> {
    let kept = skel.group(group.name())?;
    let mut keep = vec![false; skel.n_joints()];
    for &i in kept {
        keep[i] = true;
    }
    let mut out = motion.clone();
    let id6: [f32; 6] = rotation::IDENTITY_6D.map(|v| v as f32);
    for t in 0..motion.n_frames {
        for j in 0..motion.n_joints {
            if !keep[j] {
                let base = t * motion.n_joints * 6 + j * 6;
                out.rotations6d[base..base + 6].copy_from_slice(&id6);
            }
        }
    }
    if group == PartGroup::Hand {
        out.root_translation.fill(0.0);
    }
    Ok(out)
}

/// Forward differences of positions (T x J x 3 flat) in units per frame.
pub fn velocity(positions: &[f64], n_frames: usize) -> Result<Vec<f64>> {
    if n_frames < 2 {
        return Err(Error::InputTooShort("velocity needs at least two frames".into()));
    }
    let w = positions.len() / n_frames;
    let mut out = Vec::with_capacity((n_frames - 1) * w);
    for t in 0..n_frames - 1 {
        for c in 0..w {
            out.push(positions[(t + 1) * w + c] - positions[t * w + c]);
        }
    }
    Ok(out)
}

/// Ground-truth contact labels: 1 where a contact joint is both slow
/// (speed < speed_thresh, units/frame) and low (height < height_thresh).
/// The last frame copies the previous one.
pub fn contact_labels(
    positions: &[f64],
    n_frames: usize,
    skel: &Skeleton,
    speed_thresh: f64,
    height_thresh: f64,
) -> Result<Vec<f32>> {
    if skel.contact_joints.is_empty() {
        return Err(Error::ConfigError("skeleton has no contact joints".into()));
    }
    if n_frames < 2 {
        return Err(Error::InputTooShort("contact labels need at least two frames".into()));
    }
    let j = skel.n_joints();
    let k = skel.contact_joints.len();
    let mut out = vec![0.0f32; n_frames * k];
    for t in 0..n_frames - 1 {
        for (ci, &joint) in skel.contact_joints.iter().enumerate() {
            let p = &positions[t * j * 3 + joint * 3..t * j * 3 + joint * 3 + 3];
            let q = &positions[(t + 1) * j * 3 + joint * 3..(t + 1) * j * 3 + joint * 3 + 3];
            let speed = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)).sqrt();
            if speed < speed_thresh && p[1] < height_thresh {
                out[t * k + ci] = 1.0;
            }
        }
    }
    for ci in 0..k {
        out[(n_frames - 1) * k + ci] = out[(n_frames - 2) * k + ci];
    }
    Ok(out)
}

/// Default contact speed threshold, units per frame.
pub const CONTACT_SPEED_THRESH: f64 = 0.005;
/// Height margin above the rest-pose contact-joint height.
pub const CONTACT_HEIGHT_MARGIN: f64 = 0.05;

/// Height threshold derived from the skeleton's rest pose: the highest
/// contact joint's rest height plus a margin.
pub fn default_height_thresh(skel: &Skeleton) -> f64 {
    let rest = skel.rest_positions();
    let top = skel
        .contact_joints
        .iter()
        .map(|&j| rest[j][1])
        .fold(f64::NEG_INFINITY, f64::max);
    top + CONTACT_HEIGHT_MARGIN
}

/// (x - mean) / std, row-major T x D.
pub fn standardize(flat: &[f32], stats: &NormStats) -> Result<Vec<f32>> {
    apply_stats(flat, stats, |x, m, s| (x - m) / s)
}

/// x * std + mean.
pub fn destandardize(flat: &[f32], stats: &NormStats) -> Result<Vec<f32>> {
    apply_stats(flat, stats, |x, m, s| x * s + m)
}

fn apply_stats(flat: &[f32], stats: &NormStats, f: impl Fn(f64, f64, f64) -> f64) -> Result<Vec<f32>> {
    let d = stats.dim();
    if d == 0 || flat.len() % d != 0 {
        return Err(Error::ShapeError(format!(
            "flat length {} does not match stats dim {d}",
            flat.len()
        )));
    }
    Ok(flat
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x as f64, stats.mean[i % d] as f64, stats.std[i % d] as f64) as f32)
        .collect())
}
