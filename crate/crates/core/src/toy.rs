//! Synthetic metronome-conducting dataset: click-track audio paired with
//! beat-locked arm motion on the toy skeleton, with known beat frames.
//!
//! Beat periods divide the 30 FPS grid exactly for the supported tempos
//! (60/90/120 BPM), so every beat lands on an integer frame. Clicks are
//! emitted one hop later than the motion ictus so the onset detector's
//! spectral-flux spike (which fires on the first analysis window that
//! catches the attack) lands on the same frame index as the motion's
//! speed minimum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, extract_music_features, AudioClip, MusicFeatureSequence};
use crate::error::{Error, Result};
use crate::kin::rotation::rotmat_to_sixd;
use crate::kin::{toy9, MotionSequence, Skeleton};

pub const FPS: u32 = 30;
/// First beat sits half a second in so edge frames stay clean.
const FIRST_BEAT_S: f64 = 0.5;
/// Click onset delay relative to the motion ictus, in hops (see module doc).
const CLICK_LEAD_HOPS: usize = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToySpec {
    pub bpm: f64,
    pub meter: usize,
    pub duration_s: f64,
    /// Beat-pattern amplitude in meters.
    pub amplitude: f64,
    /// Smooth positional noise amplitude in meters.
    pub noise: f64,
    pub seed: u64,
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        if self.duration_s < 4.0 {
            return Err(Error::ConfigError("toy clips need at least 4 s".into()));
        }
        if !(40.0..=200.0).contains(&self.bpm) {
            return Err(Error::ConfigError(format!("bpm {} outside the tracker range", self.bpm)));
        }
        if !(2..=4).contains(&self.meter) {
            return Err(Error::ConfigError(format!("meter {} not in 2..=4", self.meter)));
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        (self.duration_s * FPS as f64).round() as usize
    }

    /// Beat frames (integer for the supported tempos), interior to the clip.
    pub fn beat_frames(&self) -> Vec<usize> {
        let period = 60.0 / self.bpm * FPS as f64;
        let t_end = self.n_frames() as f64 - 0.4 * FPS as f64;
        let mut out = Vec::new();
        let mut f = FIRST_BEAT_S * FPS as f64;
        while f < t_end {
            out.push(f.round() as usize);
            f += period;
        }
        out
    }
}

/// Decaying 1 kHz sine bursts at the beat instants; the downbeat of each
/// measure is twice as loud.
pub fn make_click_track(spec: &ToySpec) -> Result<AudioClip> {
    spec.validate()?;
    let sr = dsp::SAMPLE_RATE;
    let n = (spec.duration_s * sr as f64) as usize;
    let mut samples = vec![0.0f64; n];
    let burst_len = (0.030 * sr as f64) as usize;
    let decay = 0.008 * sr as f64;
    for (k, &frame) in spec.beat_frames().iter().enumerate() {
        let start = frame * dsp::HOP + CLICK_LEAD_HOPS * dsp::HOP;
        let amp = if k % spec.meter == 0 { 0.8 } else { 0.4 };
        for i in 0..burst_len.min(n.saturating_sub(start)) {
            let env = (-(i as f64) / decay).exp();
            samples[start + i] +=
                amp * env * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / sr as f64).sin();
        }
    }
    AudioClip::new(samples, sr)
}

/// Meter-dependent beat-pattern vertices (x, y) in the conducting plane,
/// relative to the hand's rest center, in units of the amplitude. Segment
/// lengths are deliberately unequal so speed minima are unambiguous.
fn pattern_points(meter: usize) -> Vec<[f64; 2]> {
    match meter {
        2 => vec![[0.0, -1.0], [0.35, 0.55]],
        3 => vec![[0.0, -1.0], [0.55, -0.75], [0.15, 0.45]],
        _ => vec![[0.0, -1.0], [-0.5, -0.7], [0.6, -0.65], [0.1, 0.5]],
    }
}

/// Rodrigues rotation taking unit vector `a` onto unit vector `b`
/// (minimal-angle choice; antiparallel input picks a fixed perpendicular axis).
fn rotation_between(a: [f64; 3], b: [f64; 3]) -> [f64; 9] {
    let cross = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let s2 = cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2];
    let c = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    if s2 < 1e-16 {
        if c > 0.0 {
            return [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        }
        // 180 degrees about any axis perpendicular to a.
        let perp = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let axis = {
            let c =
                [a[1] * perp[2] - a[2] * perp[1], a[2] * perp[0] - a[0] * perp[2], a[0] * perp[1] - a[1] * perp[0]];
            let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
            [c[0] / n, c[1] / n, c[2] / n]
        };
        return axis_angle(axis, std::f64::consts::PI);
    }
    let s = s2.sqrt();
    let axis = [cross[0] / s, cross[1] / s, cross[2] / s];
    axis_angle(axis, s.atan2(c))
}

fn axis_angle(axis: [f64; 3], angle: f64) -> [f64; 9] {
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let [x, y, z] = axis;
    [
        t * x * x + c,
        t * x * y - s * z,
        t * x * z + s * y,
        t * x * y + s * z,
        t * y * y + c,
        t * y * z - s * x,
        t * x * z - s * y,
        t * y * z + s * x,
        t * z * z + c,
    ]
}

fn mat_vec(m: &[f64; 9], v: [f64; 3]) -> [f64; 3] {
    [
        m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
        m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
        m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
    ]
}

fn transpose3(m: &[f64; 9]) -> [f64; 9] {
    [m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]]
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Analytic two-bone reach: local shoulder and elbow rotations that place
/// the wrist at `target` (given in the shoulder's parent frame, relative to
/// the shoulder joint). `rest_dir` is the rest-pose arm axis (+-X).
fn two_bone_ik(target: [f64; 3], l1: f64, l2: f64, rest_dir: [f64; 3]) -> ([f64; 9], [f64; 9]) {
    let dist = norm3(target).clamp((l1 - l2).abs() + 1e-4, l1 + l2 - 1e-4);
    let n = [target[0] / norm3(target), target[1] / norm3(target), target[2] / norm3(target)];
    // Shoulder interior angle from the law of cosines.
    let cos_alpha = ((l1 * l1 + dist * dist - l2 * l2) / (2.0 * l1 * dist)).clamp(-1.0, 1.0);
    let alpha = cos_alpha.acos();
    // Elbow drops in the plane spanned by the target direction and world-down.
    let down = [0.0, -1.0, 0.0];
    let mut axis = [
        n[1] * down[2] - n[2] * down[1],
        n[2] * down[0] - n[0] * down[2],
        n[0] * down[1] - n[1] * down[0],
    ];
    let an = norm3(axis);
    if an < 1e-9 {
        axis = [0.0, 0.0, 1.0];
    } else {
        axis = [axis[0] / an, axis[1] / an, axis[2] / an];
    }
    let upper_dir = mat_vec(&axis_angle(axis, alpha), n);
    let r_shoulder = rotation_between(rest_dir, upper_dir);
    // Forearm goes from the elbow to the target.
    let elbow = [upper_dir[0] * l1, upper_dir[1] * l1, upper_dir[2] * l1];
    let fore = [target[0] - elbow[0], target[1] - elbow[1], target[2] - elbow[2]];
    let fn_ = norm3(fore);
    let fore_dir = [fore[0] / fn_, fore[1] / fn_, fore[2] / fn_];
    let g = rotation_between(rest_dir, fore_dir);
    // Local elbow rotation: R_el = R_sh^T * G.
    let rt = transpose3(&r_shoulder);
    let mut r_elbow = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                r_elbow[i * 3 + j] += rt[i * 3 + k] * g[k * 3 + j];
            }
        }
    }
    (r_shoulder, r_elbow)
}

/// Smooth noise: Gaussian knots every `knot_every` frames, cubic-smoothstep
/// interpolated, scaled by `amp`.
fn smooth_noise(t: usize, amp: f64, knot_every: usize, rng: &mut impl Rng) -> Vec<[f64; 3]> {
    let n_knots = t / knot_every + 2;
    let knots: Vec<[f64; 3]> = (0..n_knots)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();
    (0..t)
        .map(|f| {
            let pos = f as f64 / knot_every as f64;
            let i = pos.floor() as usize;
            let u = pos - i as f64;
            let s = u * u * (3.0 - 2.0 * u);
            let a = knots[i];
            let b = knots[i + 1];
            [
                amp * (a[0] + (b[0] - a[0]) * s),
                amp * (a[1] + (b[1] - a[1]) * s),
                amp * (a[2] + (b[2] - a[2]) * s),
            ]
        })
        .collect()
}

/// Beat-locked conducting-like motion: the right wrist traces the meter
/// pattern with cosine easing (speed minima exactly at the beat frames), the
/// left hand mirrors at low amplitude, and the root sways gently.
pub fn make_conducting_motion(spec: &ToySpec) -> Result<MotionSequence> {
    spec.validate()?;
    let skel = toy9();
    let t = spec.n_frames();
    let beats = spec.beat_frames();
    if beats.len() < 2 {
        return Err(Error::ConfigError("clip too short for two beats".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x746f_79);
    let pattern = pattern_points(spec.meter);
    let noise_r = smooth_noise(t, spec.noise, 10, &mut rng);
    let noise_l = smooth_noise(t, spec.noise, 10, &mut rng);

    // Rest geometry of the arm chains (identity spine).
    let l1 = 0.28;
    let l2 = 0.26;
    // Hand path centers in the shoulder frame: forward and slightly down.
    let center_r = [-0.10, -0.15, 0.30];
    let center_l = [0.10, -0.15, 0.30];

    // Eased wrist position at a frame, in the shoulder frame.
    let beat_period = (beats[1] - beats[0]) as f64;
    let wrist_at = |frame: usize, mirror: f64, scale: f64, noise: &[[f64; 3]], center: [f64; 3]| {
        let f = frame as f64;
        let first = beats[0] as f64;
        // Segment index (may extend before the first beat / after the last).
        let seg_f = (f - first) / beat_period;
        let seg = seg_f.floor() as i64;
        let u = (seg_f - seg as f64).clamp(0.0, 1.0);
        let ease = (1.0 - (std::f64::consts::PI * u).cos()) / 2.0;
        let idx = |k: i64| -> [f64; 2] {
            let m = pattern.len() as i64;
            pattern[(k.rem_euclid(m)) as usize]
        };
        let a = idx(seg);
        let b = idx(seg + 1);
        let x = a[0] + (b[0] - a[0]) * ease;
        let y = a[1] + (b[1] - a[1]) * ease;
        [
            center[0] + mirror * x * spec.amplitude * scale + noise[frame][0],
            center[1] + y * spec.amplitude * scale + noise[frame][1],
            center[2] + noise[frame][2],
        ]
    };

    let j = skel.n_joints();
    let id6: [f32; 6] = crate::kin::rotation::IDENTITY_6D.map(|v| v as f32);
    let mut rot = Vec::with_capacity(t * j * 6);
    let mut root = Vec::with_capacity(t * 3);
    let sway_period = 4.0 * beat_period;
    for frame in 0..t {
        let sway = 0.01 * (2.0 * std::f64::consts::PI * frame as f64 / sway_period).sin();
        root.extend_from_slice(&[sway as f32, 0.0, 0.0]);

        let target_r = wrist_at(frame, -1.0, 1.0, &noise_r, center_r);
        let target_l = wrist_at(frame, 1.0, 0.3, &noise_l, center_l);
        let (rs_r, re_r) = two_bone_ik(target_r, l1, l2, [-1.0, 0.0, 0.0]);
        let (rs_l, re_l) = two_bone_ik(target_l, l1, l2, [1.0, 0.0, 0.0]);

        // Joint order: root, spine, head, l_shoulder, l_elbow, l_wrist,
        // r_shoulder, r_elbow, r_wrist.
        for joint in 0..j {
            let six: [f32; 6] = match joint {
                3 => rotmat_to_sixd(&rs_l).unwrap().map(|v| v as f32),
                4 => rotmat_to_sixd(&re_l).unwrap().map(|v| v as f32),
                6 => rotmat_to_sixd(&rs_r).unwrap().map(|v| v as f32),
                7 => rotmat_to_sixd(&re_r).unwrap().map(|v| v as f32),
                _ => id6,
            };
            rot.extend_from_slice(&six);
        }
    }
    MotionSequence::new(root, rot, j, FPS, None)
}

/// One generated corpus item.
pub struct ToyItem {
    pub name: String,
    pub spec: ToySpec,
    pub features: MusicFeatureSequence,
    pub motion: MotionSequence,
    pub beat_frames: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub split: String,
    pub bpm: f64,
    pub meter: usize,
    pub duration_s: f64,
    pub amplitude: f64,
    pub noise: f64,
    pub seed: u64,
    pub beat_frames: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub skeleton: String,
    pub fps: u32,
    pub items: Vec<ManifestEntry>,
}

pub struct ToyDataset {
    pub skeleton: Skeleton,
    pub train: Vec<ToyItem>,
    pub test: Vec<ToyItem>,
    pub manifest: Manifest,
}

/// Deterministic paired corpus; items generate in parallel.
pub fn make_dataset(n_train: usize, n_test: usize, seed: u64) -> Result<ToyDataset> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::ConfigError("need at least one train and one test item".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = n_train + n_test;
    let specs: Vec<ToySpec> = (0..total)
        .map(|_| ToySpec {
            bpm: [60.0, 90.0, 120.0][rng.gen_range(0..3)],
            meter: [2usize, 3, 4][rng.gen_range(0..3)],
            duration_s: 8.0,
            amplitude: rng.gen_range(0.25..0.40),
            noise: rng.gen_range(0.002..0.006),
            seed: rng.gen(),
        })
        .collect();

    let items: Vec<ToyItem> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| -> Result<ToyItem> {
            let clip = make_click_track(spec)?;
            let mut features = extract_music_features(&clip)?;
            let motion = make_conducting_motion(spec)?;
            // Feature extraction may come out one frame shy of the motion's
            // rounded count; trim both to the common length.
            let t = features.n_frames.min(motion.n_frames);
            features.frames.truncate(t * dsp::FEATURE_DIM);
            features.n_frames = t;
            let motion = window_motion(&motion, 0, t);
            let split = if i < n_train { "train" } else { "test" };
            Ok(ToyItem {
                name: format!("{split}_{i:04}"),
                spec: spec.clone(),
                features,
                motion,
                beat_frames: spec.beat_frames(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest {
        seed,
        skeleton: "toy9".into(),
        fps: FPS,
        items: items
            .iter()
            .enumerate()
            .map(|(i, it)| ManifestEntry {
                name: it.name.clone(),
                split: if i < n_train { "train".into() } else { "test".into() },
                bpm: it.spec.bpm,
                meter: it.spec.meter,
                duration_s: it.spec.duration_s,
                amplitude: it.spec.amplitude,
                noise: it.spec.noise,
                seed: it.spec.seed,
                beat_frames: it.beat_frames.clone(),
            })
            .collect(),
    };
    let mut items = items;
    let test = items.split_off(n_train);
    Ok(ToyDataset { skeleton: toy9(), train: items, test, manifest })
}

/// Contiguous frame window of a motion.
pub fn window_motion(motion: &MotionSequence, start: usize, len: usize) -> MotionSequence {
    let j = motion.n_joints;
    let root = motion.root_translation[start * 3..(start + len) * 3].to_vec();
    let rot = motion.rotations6d[start * j * 6..(start + len) * j * 6].to_vec();
    let contacts = motion.contacts.as_ref().map(|c| {
        let k = c.len() / motion.n_frames;
        c[start * k..(start + len) * k].to_vec()
    });
    MotionSequence::new(root, rot, j, motion.fps, contacts).expect("window of a valid motion is valid")
}
