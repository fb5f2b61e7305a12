//! Masked-denoising editing: a binary mask over (frame, channel) pins known
//! values through every denoising step — temporal in-betweening,
//! continuation, and joint-level completion all reduce to mask builders.

use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserBundle;
use crate::error::{Error, Result};
use crate::kin::ops::standardize;
use crate::kin::{MotionSequence, Skeleton};
use crate::nn::tensor::Tensor;

use super::sample::{ddim_core, encode_music, motion_from_prediction, SamplerConfig};
use super::schedule::DiffusionSchedule;

/// User-facing mask: 1 = known/constrained, 0 = free, over the export layout
/// (T x (3 + 6J)); x_known supplies values wherever the mask is set.
#[derive(Clone, Debug)]
pub struct EditMask {
    pub mask: Vec<f32>,
    pub n_frames: usize,
    pub d_export: usize,
    pub known: MotionSequence,
}

impl EditMask {
    pub fn new(mask: Vec<f32>, known: MotionSequence) -> Result<Self> {
        let d_export = known.frame_dim();
        let n_frames = known.n_frames;
        if mask.len() != n_frames * d_export {
            return Err(Error::ShapeError(format!(
                "mask length {} != T({n_frames}) x D({d_export})",
                mask.len()
            )));
        }
        if mask.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::ConfigError("mask entries must be 0 or 1".into()));
        }
        Ok(Self { mask, n_frames, d_export, known })
    }
}

/// Mask expanded over the diffusion width (contact channels always free),
/// with the known values standardized.
pub struct CompiledMask {
    pub mask: Vec<f32>,
    pub known_std: Vec<f32>,
    pub n_frames: usize,
    pub d_motion: usize,
}

impl CompiledMask {
    pub fn compile(edit: &EditMask, skel: &Skeleton, bundle: &DenoiserBundle) -> Result<Self> {
        if edit.d_export != skel.frame_dim() {
            return Err(Error::ShapeError("mask width does not match skeleton".into()));
        }
        let k = skel.n_contacts();
        let d_motion = edit.d_export + k;
        if d_motion != bundle.config.d_motion {
            return Err(Error::ShapeError("mask width does not match model".into()));
        }
        let flat = edit.known.flatten();
        let mut mask = Vec::with_capacity(edit.n_frames * d_motion);
        let mut known = Vec::with_capacity(edit.n_frames * d_motion);
        for t in 0..edit.n_frames {
            mask.extend_from_slice(&edit.mask[t * edit.d_export..(t + 1) * edit.d_export]);
            mask.extend(std::iter::repeat(0.0).take(k));
            known.extend_from_slice(&flat[t * edit.d_export..(t + 1) * edit.d_export]);
            known.extend(std::iter::repeat(0.0).take(k));
        }
        let known_std = standardize(&known, &bundle.norm_stats)?;
        Ok(Self { mask, known_std, n_frames: edit.n_frames, d_motion })
    }

    pub fn check(&self, t_frames: usize, d: usize) -> Result<()> {
        if self.n_frames != t_frames || self.d_motion != d {
            return Err(Error::ShapeError(format!(
                "mask is {}x{}, sampler runs {t_frames}x{d}",
                self.n_frames, self.d_motion
            )));
        }
        Ok(())
    }

    /// m .* known + (1 - m) .* free.
    pub fn overlay(&self, free: &Tensor<f32>, known: &[f32]) -> Tensor<f32> {
        let data = free
            .data()
            .iter()
            .zip(known)
            .zip(&self.mask)
            .map(|((&f, &kv), &m)| if m == 1.0 { kv } else { f })
            .collect();
        Tensor::from_vec(free.shape().to_vec(), data)
    }
}

/// One region of a mask specification.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaskSpecEntry {
    /// Frame interval [start, end).
    pub frames: [usize; 2],
    /// Joint group names from the skeleton, or "root" (translation channels),
    /// or "all".
    pub parts: Vec<String>,
    /// "known" pins the region to x_known; "free" releases it.
    pub mode: MaskMode,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    Known,
    Free,
}

/// Compile a mask-spec entry list (applied in order over an all-free mask).
pub fn compile_mask_spec(
    entries: &[MaskSpecEntry],
    skel: &Skeleton,
    known: MotionSequence,
) -> Result<EditMask> {
    let t = known.n_frames;
    let d = known.frame_dim();
    let mut mask = vec![0.0f32; t * d];
    for e in entries {
        let [start, end] = e.frames;
        if start >= end || end > t {
            return Err(Error::ConfigError(format!("bad frame interval [{start}, {end}) for T = {t}")));
        }
        let value = match e.mode {
            MaskMode::Known => 1.0,
            MaskMode::Free => 0.0,
        };
        let mut cols: Vec<usize> = Vec::new();
        for part in &e.parts {
            match part.as_str() {
                "all" => cols.extend(0..d),
                "root" => cols.extend(0..3),
                name => {
                    for &j in skel.group(name)? {
                        cols.extend(3 + 6 * j..3 + 6 * (j + 1));
                    }
                }
            }
        }
        for f in start..end {
            for &c in &cols {
                mask[f * d + c] = value;
            }
        }
    }
    EditMask::new(mask, known)
}

pub fn mask_spec_from_json(json: &str) -> Result<Vec<MaskSpecEntry>> {
    serde_json::from_str(json).map_err(|e| Error::FormatError(format!("mask spec JSON: {e}")))
}

/// Keep frames [0, prefix) of the known motion, generate the rest
/// (temporal continuation / streaming).
pub fn continuation_mask(known: MotionSequence, prefix: usize) -> Result<EditMask> {
    let t = known.n_frames;
    let d = known.frame_dim();
    if prefix > t {
        return Err(Error::ConfigError(format!("prefix {prefix} > {t} frames")));
    }
    let mut mask = vec![0.0f32; t * d];
    for f in 0..prefix {
        for c in 0..d {
            mask[f * d + c] = 1.0;
        }
    }
    EditMask::new(mask, known)
}

/// Known prefix and suffix, free middle (temporal in-betweening).
pub fn inbetween_mask(known: MotionSequence, prefix: usize, suffix: usize) -> Result<EditMask> {
    let t = known.n_frames;
    let d = known.frame_dim();
    if prefix + suffix > t {
        return Err(Error::ConfigError(format!("prefix {prefix} + suffix {suffix} > {t} frames")));
    }
    let mut mask = vec![0.0f32; t * d];
    for f in (0..prefix).chain(t - suffix..t) {
        for c in 0..d {
            mask[f * d + c] = 1.0;
        }
    }
    EditMask::new(mask, known)
}

/// Pin a set of joint groups (plus optionally the root translation) at every
/// frame; everything else is generated. Covers upper-to-lower completion and
/// body-to-hand/face enrichment.
pub fn joint_groups_mask(
    known: MotionSequence,
    skel: &Skeleton,
    groups: &[&str],
    pin_root: bool,
) -> Result<EditMask> {
    let t = known.n_frames;
    let d = known.frame_dim();
    let mut mask = vec![0.0f32; t * d];
    let mut cols: Vec<usize> = Vec::new();
    if pin_root {
        cols.extend(0..3);
    }
    for g in groups {
        for &j in skel.group(g)? {
            cols.extend(3 + 6 * j..3 + 6 * (j + 1));
        }
    }
    for f in 0..t {
        for &c in &cols {
            mask[f * d + c] = 1.0;
        }
    }
    EditMask::new(mask, known)
}

/// Masked-denoising generation: at every DDIM step the masked entries are
/// replaced by a fresh forward-noising of x_known at that step's timestep;
/// after the final step they are set to x_known bit-exactly (raw space, so
/// no standardization round-trip error on the constrained entries).
pub fn edit_masked(
    bundle: &DenoiserBundle,
    skel: &Skeleton,
    schedule: &DiffusionSchedule,
    music: &Tensor<f32>,
    edit: &EditMask,
    sampler: &SamplerConfig,
) -> Result<MotionSequence> {
    let compiled = CompiledMask::compile(edit, skel, bundle)?;
    let t_frames = compiled.n_frames;
    let memory = encode_music(bundle, music, t_frames)?;
    let x_std = ddim_core(bundle, schedule, &memory, sampler, t_frames, Some(&compiled))?;
    let mut motion = motion_from_prediction(&x_std, skel, bundle, 30)?;

    // Exact final enforcement on the export channels.
    let known_flat = edit.known.flatten();
    let mut flat = motion.flatten();
    for (i, v) in flat.iter_mut().enumerate() {
        if edit.mask[i] == 1.0 {
            *v = known_flat[i];
        }
    }
    let contacts = motion.contacts.take();
    MotionSequence::from_flat(&flat, skel.n_joints(), 30, contacts)
}
