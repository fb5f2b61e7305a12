//! Evaluation: per-part kinetic features, FID/DIV, kinematic beats and beat
//! alignment similarity.

pub mod fid;

pub use fid::{div, fid, fid_from_stats, GaussianStats};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kin::{fk::forward_kinematics, ops::velocity, MotionSequence, Skeleton};

/// BAS kernel width in frames at 30 FPS.
pub const BAS_SIGMA: f64 = 3.0;
/// Kinematic-beat thinning window, matching the audio peak picker.
pub const BEAT_MIN_SEPARATION: usize = 7;

/// Per-joint, per-axis mean squared velocity over the frames, concatenated
/// in group order: length 3 * |group|.
pub fn kinetic_features(motion: &MotionSequence, skel: &Skeleton, group: &str) -> Result<Vec<f64>> {
    if motion.n_frames < 2 {
        return Err(Error::InputTooShort("kinetic features need at least two frames".into()));
    }
    let joints = skel.group(group)?;
    let pos = forward_kinematics(skel, motion)?;
    let vel = velocity(&pos, motion.n_frames)?;
    let j = skel.n_joints();
    let frames = motion.n_frames - 1;
    let mut out = Vec::with_capacity(joints.len() * 3);
    for &joint in joints {
        for axis in 0..3 {
            let mut acc = 0.0;
            for t in 0..frames {
                let v = vel[t * j * 3 + joint * 3 + axis];
                acc += v * v;
            }
            out.push(acc / frames as f64);
        }
    }
    Ok(out)
}

/// Beat frames from total joint speed: descent-strict local minima of
/// s_t = sum_j ||v_{j,t}||, thinned greedily by ascending depth with the
/// audio picker's separation rule. (The exit side of a minimum is non-strict
/// so symmetric pauses still register.)
pub fn kinematic_beats(motion: &MotionSequence, skel: &Skeleton) -> Result<Vec<usize>> {
    if motion.n_frames < 3 {
        return Err(Error::InputTooShort("beat detection needs at least three frames".into()));
    }
    let pos = forward_kinematics(skel, motion)?;
    let vel = velocity(&pos, motion.n_frames)?;
    let j = skel.n_joints();
    let frames = motion.n_frames - 1;
    let speed: Vec<f64> = (0..frames)
        .map(|t| {
            (0..j)
                .map(|joint| {
                    let v = &vel[t * j * 3 + joint * 3..t * j * 3 + joint * 3 + 3];
                    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
                })
                .sum()
        })
        .collect();

    // Descents shallower than the f32 position round-off scale are jitter,
    // not pauses (constant-speed motion must yield no beats).
    let pos_scale = pos.iter().fold(0.0f64, |m, &p| m.max(p.abs()));
    let tol = 1e-6 * (1.0 + pos_scale);
    let mut candidates: Vec<usize> = (1..frames.saturating_sub(1))
        .filter(|&i| speed[i] < speed[i - 1] - tol && speed[i] <= speed[i + 1])
        .collect();
    candidates.sort_by(|&a, &b| speed[a].partial_cmp(&speed[b]).unwrap().then(a.cmp(&b)));
    let mut accepted: Vec<usize> = Vec::new();
    for i in candidates {
        if accepted.iter().all(|&k| i.abs_diff(k) >= BEAT_MIN_SEPARATION) {
            accepted.push(i);
        }
    }
    accepted.sort_unstable();
    Ok(accepted)
}

/// Mean over music beats of exp(-d^2 / (2 sigma^2)) to the nearest motion
/// beat. Empty motion beats score zero; empty music beats are an error.
pub fn bas(music_beats: &[usize], motion_beats: &[usize], sigma: f64) -> Result<f64> {
    if music_beats.is_empty() {
        return Err(Error::ConfigError("BAS needs at least one music beat".into()));
    }
    if motion_beats.is_empty() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for &tm in music_beats {
        let d = motion_beats
            .iter()
            .map(|&td| (td as f64 - tm as f64).abs())
            .fold(f64::INFINITY, f64::min);
        acc += (-d * d / (2.0 * sigma * sigma)).exp();
    }
    Ok(acc / music_beats.len() as f64)
}

/// One sequence paired with its music beat frames.
pub struct EvalItem {
    pub motion: MotionSequence,
    pub music_beats: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub fid_hand: f64,
    pub fid_body: f64,
    pub fid_face: f64,
    pub div_hand: f64,
    pub div_body: f64,
    pub div_face: f64,
    pub div_ref_hand: f64,
    pub div_ref_body: f64,
    pub div_ref_face: f64,
    /// Beat-pooled alignment of the generated set, and of the reference set.
    pub bas: f64,
    pub bas_ref: f64,
    pub n_generated: usize,
    pub n_reference: usize,
    pub sigma_frames: f64,
    pub skeleton: String,
}

fn group_features(items: &[EvalItem], skel: &Skeleton, group: &str) -> Result<Vec<Vec<f64>>> {
    items
        .par_iter()
        .map(|it| kinetic_features(&it.motion, skel, group))
        .collect::<Result<Vec<_>>>()
}

/// Beat-pooled BAS: every music beat across the corpus contributes equally.
pub fn corpus_bas(items: &[EvalItem], skel: &Skeleton, sigma: f64) -> Result<f64> {
    let per: Vec<(f64, usize)> = items
        .par_iter()
        .map(|it| -> Result<(f64, usize)> {
            if it.music_beats.is_empty() {
                return Ok((0.0, 0));
            }
            let beats = kinematic_beats(&it.motion, skel)?;
            let s = bas(&it.music_beats, &beats, sigma)?;
            Ok((s * it.music_beats.len() as f64, it.music_beats.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (acc, n) = per.iter().fold((0.0, 0usize), |(a, n), &(s, c)| (a + s, n + c));
    if n == 0 {
        return Err(Error::ConfigError("no music beats in the corpus".into()));
    }
    Ok(acc / n as f64)
}

/// Full report over a generated set versus a reference set.
pub fn compute_report(
    generated: &[EvalItem],
    reference: &[EvalItem],
    skel: &Skeleton,
) -> Result<MetricReport> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::ConfigError("metric report needs non-empty sets".into()));
    }
    let mut fids = [0.0; 3];
    let mut divs = [0.0; 3];
    let mut divs_ref = [0.0; 3];
    for (i, group) in ["hand", "body", "face"].iter().enumerate() {
        let gen_f = group_features(generated, skel, group)?;
        let ref_f = group_features(reference, skel, group)?;
        fids[i] = fid(&gen_f, &ref_f)?;
        divs[i] = div(&gen_f)?;
        divs_ref[i] = div(&ref_f)?;
    }
    Ok(MetricReport {
        fid_hand: fids[0],
        fid_body: fids[1],
        fid_face: fids[2],
        div_hand: divs[0],
        div_body: divs[1],
        div_face: divs[2],
        div_ref_hand: divs_ref[0],
        div_ref_body: divs_ref[1],
        div_ref_face: divs_ref[2],
        bas: corpus_bas(generated, skel, BAS_SIGMA)?,
        bas_ref: corpus_bas(reference, skel, BAS_SIGMA)?,
        n_generated: generated.len(),
        n_reference: reference.len(),
        sigma_frames: BAS_SIGMA,
        skeleton: skel.name.clone(),
    })
}
