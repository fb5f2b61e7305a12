//! Motion representation: skeletons, 6D joint rotations, forward kinematics,
//! hand/body masking, velocities, contact labels, and standardization.
//!
//! Conventions: meters, Y up, X toward the character's left, Z forward.
//! A motion frame exports as [root_translation(3); rotations6d(6 J)].

pub mod fk;
pub mod ops;
pub mod rotation;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Joint {
    pub name: String,
    /// Index of the parent joint; -1 for the root.
    pub parent: i32,
    /// Rest-pose offset from the parent, meters.
    pub offset: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Skeleton {
    pub name: String,
    pub joints: Vec<Joint>,
    /// Named joint-index sets; `body`, `hand`, `face`, `foot` are required
    /// (foot may be empty), extra groups such as `upper`/`lower` are allowed.
    pub groups: BTreeMap<String, Vec<usize>>,
    /// Ordered subset of `foot`; one contact channel per entry.
    pub contact_joints: Vec<usize>,
}

impl Skeleton {
    pub fn validate(&self) -> Result<()> {
        let j = self.joints.len();
        if j == 0 {
            return Err(Error::ConfigError("skeleton has no joints".into()));
        }
        for (i, joint) in self.joints.iter().enumerate() {
            match (i, joint.parent) {
                (0, -1) => {}
                (0, p) => return Err(Error::ConfigError(format!("root joint has parent {p}"))),
                (_, p) if p < 0 => {
                    return Err(Error::ConfigError(format!("joint {i} ({}) has no parent", joint.name)))
                }
                (_, p) if p as usize >= i => {
                    return Err(Error::ConfigError(format!(
                        "joint {i} ({}) not topologically sorted (parent {p})",
                        joint.name
                    )))
                }
                _ => {}
            }
        }
        for need in ["body", "hand", "face", "foot"] {
            if !self.groups.contains_key(need) {
                return Err(Error::ConfigError(format!("missing joint group '{need}'")));
            }
        }
        for (name, idxs) in &self.groups {
            if idxs.iter().any(|&i| i >= j) {
                return Err(Error::ConfigError(format!("group '{name}' references joint out of range")));
            }
        }
        let mut covered = vec![false; j];
        for g in ["body", "hand", "face"] {
            for &i in &self.groups[g] {
                covered[i] = true;
            }
        }
        if covered.iter().any(|c| !c) {
            return Err(Error::ConfigError("body+hand+face groups do not cover all joints".into()));
        }
        let foot = &self.groups["foot"];
        if self.contact_joints.iter().any(|c| !foot.contains(c)) {
            return Err(Error::ConfigError("contact joints must lie in the foot group".into()));
        }
        Ok(())
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    /// Export frame width 3 + 6 J.
    pub fn frame_dim(&self) -> usize {
        3 + 6 * self.n_joints()
    }

    /// Number of contact channels.
    pub fn n_contacts(&self) -> usize {
        self.contact_joints.len()
    }

    pub fn group(&self, name: &str) -> Result<&[usize]> {
        self.groups
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::ConfigError(format!("unknown joint group '{name}'")))
    }

    pub fn parent_indices(&self) -> Vec<isize> {
        self.joints.iter().map(|j| j.parent as isize).collect()
    }

    pub fn offsets(&self) -> Vec<[f64; 3]> {
        self.joints.iter().map(|j| j.offset).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("skeleton serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let skel: Skeleton =
            serde_json::from_str(s).map_err(|e| Error::FormatError(format!("skeleton JSON: {e}")))?;
        skel.validate()?;
        Ok(skel)
    }

    /// Rest-pose joint positions (identity rotations, zero root translation).
    pub fn rest_positions(&self) -> Vec<[f64; 3]> {
        let mut pos = vec![[0.0; 3]; self.n_joints()];
        for (i, joint) in self.joints.iter().enumerate().skip(1) {
            let p = pos[joint.parent as usize];
            pos[i] = [p[0] + joint.offset[0], p[1] + joint.offset[1], p[2] + joint.offset[2]];
        }
        pos
    }
}

/// A motion clip over a skeleton: per-frame root translation and 6D joint
/// rotations, plus optional contact probabilities in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    /// T x 3 row-major.
    pub root_translation: Vec<f32>,
    /// T x (J*6) row-major; joint j occupies columns [6j, 6j+6).
    pub rotations6d: Vec<f32>,
    pub n_frames: usize,
    pub n_joints: usize,
    pub fps: u32,
    /// T x K row-major, K = number of contact channels.
    pub contacts: Option<Vec<f32>>,
}

impl MotionSequence {
    pub fn new(
        root_translation: Vec<f32>,
        rotations6d: Vec<f32>,
        n_joints: usize,
        fps: u32,
        contacts: Option<Vec<f32>>,
    ) -> Result<Self> {
        if root_translation.len() % 3 != 0 {
            return Err(Error::ShapeError("root translation not T x 3".into()));
        }
        let n_frames = root_translation.len() / 3;
        if n_frames == 0 {
            return Err(Error::InputTooShort("motion needs at least one frame".into()));
        }
        if rotations6d.len() != n_frames * n_joints * 6 {
            return Err(Error::ShapeError(format!(
                "rotations length {} != T({n_frames}) x J({n_joints}) x 6",
                rotations6d.len()
            )));
        }
        if let Some(c) = &contacts {
            if n_frames == 0 || c.len() % n_frames != 0 {
                return Err(Error::ShapeError("contacts not T x K".into()));
            }
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::NumericalError("contact values outside [0,1]".into()));
            }
        }
        if !root_translation.iter().all(|v| v.is_finite()) || !rotations6d.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalError("non-finite motion value".into()));
        }
        Ok(Self { root_translation, rotations6d, n_frames, n_joints, fps, contacts })
    }

    /// All-identity pose held for `n_frames`.
    pub fn rest(skel: &Skeleton, n_frames: usize, fps: u32) -> Self {
        let j = skel.n_joints();
        let mut rot = Vec::with_capacity(n_frames * j * 6);
        for _ in 0..n_frames * j {
            rot.extend_from_slice(&rotation::IDENTITY_6D.map(|v| v as f32));
        }
        Self {
            root_translation: vec![0.0; n_frames * 3],
            rotations6d: rot,
            n_frames,
            n_joints: j,
            fps,
            contacts: None,
        }
    }

    pub fn n_contacts(&self) -> usize {
        self.contacts.as_ref().map(|c| c.len() / self.n_frames).unwrap_or(0)
    }

    /// Export width 3 + 6 J (contacts are carried separately).
    pub fn frame_dim(&self) -> usize {
        3 + 6 * self.n_joints
    }

    /// Flatten to the export layout [tau; rot6d] per frame, T x (3+6J).
    pub fn flatten(&self) -> Vec<f32> {
        let d = self.frame_dim();
        let mut out = Vec::with_capacity(self.n_frames * d);
        for t in 0..self.n_frames {
            out.extend_from_slice(&self.root_translation[t * 3..(t + 1) * 3]);
            out.extend_from_slice(&self.rotations6d[t * self.n_joints * 6..(t + 1) * self.n_joints * 6]);
        }
        out
    }

    /// Rebuild from the export layout.
    pub fn from_flat(
        flat: &[f32],
        n_joints: usize,
        fps: u32,
        contacts: Option<Vec<f32>>,
    ) -> Result<Self> {
        let d = 3 + 6 * n_joints;
        if flat.len() % d != 0 {
            return Err(Error::ShapeError(format!("flat length {} not T x {d}", flat.len())));
        }
        let t = flat.len() / d;
        let mut root = Vec::with_capacity(t * 3);
        let mut rot = Vec::with_capacity(t * n_joints * 6);
        for f in 0..t {
            root.extend_from_slice(&flat[f * d..f * d + 3]);
            rot.extend_from_slice(&flat[f * d + 3..(f + 1) * d]);
        }
        Self::new(root, rot, n_joints, fps, contacts)
    }
}

/// Per-channel standardization statistics with a floored std.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    /// Fit over row-major frames of width `d`.
    pub fn fit(frames: &[f32], d: usize) -> Result<Self> {
        if d == 0 || frames.len() % d != 0 || frames.is_empty() {
            return Err(Error::ShapeError(format!("stats input length {} not T x {d}", frames.len())));
        }
        let rows = frames.len() / d;
        let mut mean = vec![0.0f64; d];
        for row in frames.chunks_exact(d) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v as f64;
            }
        }
        for m in mean.iter_mut() {
            *m /= rows as f64;
        }
        let mut var = vec![0.0f64; d];
        for row in frames.chunks_exact(d) {
            for (c, (&v, &m)) in row.iter().zip(&mean).enumerate() {
                let dv = v as f64 - m;
                var[c] += dv * dv;
            }
        }
        let std: Vec<f32> =
            var.iter().map(|v| ((v / rows as f64).sqrt()).max(STD_FLOOR) as f32).collect();
        Ok(Self { mean: mean.iter().map(|&m| m as f32).collect(), std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Identity stats (mean 0, std 1).
    pub fn identity(d: usize) -> Self {
        Self { mean: vec![0.0; d], std: vec![1.0; d] }
    }
}

/// The desk-scale 9-joint skeleton: root, spine, head, and two
/// shoulder-elbow-wrist arms. The hand group is the elbow+wrist chain so the
/// hand-masked kinematic loss has articulation to supervise (a lone leaf
/// wrist would make that term identically zero); no feet.
pub fn toy9() -> Skeleton {
    let joints = vec![
        Joint { name: "root".into(), parent: -1, offset: [0.0, 0.0, 0.0] },
        Joint { name: "spine".into(), parent: 0, offset: [0.0, 0.45, 0.0] },
        Joint { name: "head".into(), parent: 1, offset: [0.0, 0.30, 0.0] },
        Joint { name: "l_shoulder".into(), parent: 1, offset: [0.20, 0.22, 0.0] },
        Joint { name: "l_elbow".into(), parent: 3, offset: [0.28, 0.0, 0.0] },
        Joint { name: "l_wrist".into(), parent: 4, offset: [0.26, 0.0, 0.0] },
        Joint { name: "r_shoulder".into(), parent: 1, offset: [-0.20, 0.22, 0.0] },
        Joint { name: "r_elbow".into(), parent: 6, offset: [-0.28, 0.0, 0.0] },
        Joint { name: "r_wrist".into(), parent: 7, offset: [-0.26, 0.0, 0.0] },
    ];
    let mut groups = BTreeMap::new();
    groups.insert("body".into(), vec![0, 1, 2, 3, 6]);
    groups.insert("hand".into(), vec![4, 5, 7, 8]);
    groups.insert("face".into(), vec![2]);
    groups.insert("foot".into(), vec![]);
    groups.insert("upper".into(), (1..9).collect());
    groups.insert("lower".into(), vec![0]);
    let skel = Skeleton { name: "toy9".into(), joints, groups, contact_joints: vec![] };
    skel.validate().expect("builtin skeleton is valid");
    skel
}

/// Full 55-joint tree in the standard SMPL-X joint order with plausible
/// rest-pose offsets (the shape model itself is out of scope; any offsets
/// with the right topology work).
pub fn smplx55() -> Skeleton {
    // (name, parent, offset)
    #[rustfmt::skip]
    let spec: [(&str, i32, [f64; 3]); 55] = [
        ("pelvis",         -1, [ 0.000,  0.000,  0.000]),
        ("left_hip",        0, [ 0.090, -0.080,  0.000]),
        ("right_hip",       0, [-0.090, -0.080,  0.000]),
        ("spine1",          0, [ 0.000,  0.110,  0.000]),
        ("left_knee",       1, [ 0.000, -0.400,  0.000]),
        ("right_knee",      2, [ 0.000, -0.400,  0.000]),
        ("spine2",          3, [ 0.000,  0.140,  0.000]),
        ("left_ankle",      4, [ 0.000, -0.420,  0.000]),
        ("right_ankle",     5, [ 0.000, -0.420,  0.000]),
        ("spine3",          6, [ 0.000,  0.060,  0.000]),
        ("left_foot",       7, [ 0.000, -0.060,  0.130]),
        ("right_foot",      8, [ 0.000, -0.060,  0.130]),
        ("neck",            9, [ 0.000,  0.210,  0.000]),
        ("left_collar",     9, [ 0.050,  0.180,  0.000]),
        ("right_collar",    9, [-0.050,  0.180,  0.000]),
        ("head",           12, [ 0.000,  0.070,  0.000]),
        ("left_shoulder",  13, [ 0.100,  0.020,  0.000]),
        ("right_shoulder", 14, [-0.100,  0.020,  0.000]),
        ("left_elbow",     16, [ 0.260,  0.000,  0.000]),
        ("right_elbow",    17, [-0.260,  0.000,  0.000]),
        ("left_wrist",     18, [ 0.250,  0.000,  0.000]),
        ("right_wrist",    19, [-0.250,  0.000,  0.000]),
        ("jaw",            15, [ 0.000,  0.010,  0.060]),
        ("left_eye",       15, [ 0.030,  0.050,  0.080]),
        ("right_eye",      15, [-0.030,  0.050,  0.080]),
        ("left_index1",    20, [ 0.090,  0.000,  0.015]),
        ("left_index2",    25, [ 0.030,  0.000,  0.000]),
        ("left_index3",    26, [ 0.022,  0.000,  0.000]),
        ("left_middle1",   20, [ 0.092,  0.000,  0.000]),
        ("left_middle2",   28, [ 0.032,  0.000,  0.000]),
        ("left_middle3",   29, [ 0.024,  0.000,  0.000]),
        ("left_pinky1",    20, [ 0.082,  0.000, -0.028]),
        ("left_pinky2",    31, [ 0.024,  0.000,  0.000]),
        ("left_pinky3",    32, [ 0.018,  0.000,  0.000]),
        ("left_ring1",     20, [ 0.088,  0.000, -0.014]),
        ("left_ring2",     34, [ 0.030,  0.000,  0.000]),
        ("left_ring3",     35, [ 0.022,  0.000,  0.000]),
        ("left_thumb1",    20, [ 0.030,  0.000,  0.028]),
        ("left_thumb2",    37, [ 0.030,  0.000,  0.012]),
        ("left_thumb3",    38, [ 0.025,  0.000,  0.008]),
        ("right_index1",   21, [-0.090,  0.000,  0.015]),
        ("right_index2",   40, [-0.030,  0.000,  0.000]),
        ("right_index3",   41, [-0.022,  0.000,  0.000]),
        ("right_middle1",  21, [-0.092,  0.000,  0.000]),
        ("right_middle2",  43, [-0.032,  0.000,  0.000]),
        ("right_middle3",  44, [-0.024,  0.000,  0.000]),
        ("right_pinky1",   21, [-0.082,  0.000, -0.028]),
        ("right_pinky2",   46, [-0.024,  0.000,  0.000]),
        ("right_pinky3",   47, [-0.018,  0.000,  0.000]),
        ("right_ring1",    21, [-0.088,  0.000, -0.014]),
        ("right_ring2",    49, [-0.030,  0.000,  0.000]),
        ("right_ring3",    50, [-0.022,  0.000,  0.000]),
        ("right_thumb1",   21, [-0.030,  0.000,  0.028]),
        ("right_thumb2",   52, [-0.030,  0.000,  0.012]),
        ("right_thumb3",   53, [-0.025,  0.000,  0.008]),
    ];
    let joints = spec
        .iter()
        .map(|(n, p, o)| Joint { name: (*n).to_string(), parent: *p, offset: *o })
        .collect();
    let mut groups = BTreeMap::new();
    groups.insert("body".into(), (0..22).collect::<Vec<_>>());
    groups.insert("face".into(), vec![22, 23, 24]);
    groups.insert("hand".into(), (25..55).collect::<Vec<_>>());
    groups.insert("foot".into(), vec![7, 8, 10, 11]);
    let mut upper: Vec<usize> = vec![3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21];
    upper.extend(22..55);
    groups.insert("upper".into(), upper);
    groups.insert("lower".into(), vec![0, 1, 2, 4, 5, 7, 8, 10, 11]);
    // Heel (ankle) and toe (foot) contacts, left then right.
    let skel = Skeleton {
        name: "smplx55".into(),
        joints,
        groups,
        contact_joints: vec![7, 10, 8, 11],
    };
    skel.validate().expect("builtin skeleton is valid");
    skel
}

/// Look up a built-in skeleton by name.
pub fn builtin_skeleton(name: &str) -> Result<Skeleton> {
    match name {
        "toy9" => Ok(toy9()),
        "smplx55" => Ok(smplx55()),
        other => Err(Error::ConfigError(format!("unknown builtin skeleton '{other}'"))),
    }
}
