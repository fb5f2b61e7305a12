//! Metric oracles: kinetic features against a double loop, FID analytic and
//! Newton-Schulz cross-checks, DIV brute force, kinematic beats, and BAS.

use baton_core::error::Error;
use baton_core::kin::rotation::{axis_rotation, matmul3, rotmat_to_sixd};
use baton_core::kin::{fk::forward_kinematics, ops::velocity, toy9, MotionSequence, Skeleton};
use baton_core::metrics::fid::{fid_from_stats, jacobi_eigh, sqrtm_psd, GaussianStats};
use baton_core::metrics::{bas, div, fid, kinematic_beats, kinetic_features};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_motion(skel: &Skeleton, t: usize, seed: u64) -> MotionSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = skel.n_joints();
    let mut rot = Vec::with_capacity(t * j * 6);
    for _ in 0..t * j {
        let rx = axis_rotation(0, rng.gen_range(-0.6..0.6));
        let ry = axis_rotation(1, rng.gen_range(-0.6..0.6));
        let six = rotmat_to_sixd(&matmul3(&ry, &rx)).unwrap();
        rot.extend(six.iter().map(|&v| v as f32));
    }
    let root: Vec<f32> = (0..t * 3).map(|_| rng.gen_range(-0.3..0.3)).collect();
    MotionSequence::new(root, rot, j, 30, None).unwrap()
}

fn random_psd(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    // A A^T + small ridge.
    let a: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = if i == j { 0.05 } else { 0.0 };
            for k in 0..d {
                acc += a[i * d + k] * a[j * d + k];
            }
            m[i * d + j] = acc;
        }
    }
    m
}

#[test]
fn kinetic_static_zero_and_uniform_translation() {
    let skel = toy9();
    let rest = MotionSequence::rest(&skel, 10, 30);
    let f = kinetic_features(&rest, &skel, "body").unwrap();
    assert_eq!(f.len(), 3 * skel.group("body").unwrap().len());
    assert!(f.iter().all(|&v| v == 0.0));

    // Root drift c per frame: every joint contributes c^2 per axis.
    let mut drift = rest.clone();
    let c = [0.02f32, -0.01, 0.03];
    for t in 0..10 {
        for a in 0..3 {
            drift.root_translation[t * 3 + a] = c[a] * t as f32;
        }
    }
    for group in ["body", "hand", "face"] {
        let f = kinetic_features(&drift, &skel, group).unwrap();
        for (i, &v) in f.iter().enumerate() {
            let want = (c[i % 3] as f64) * (c[i % 3] as f64);
            assert!((v - want).abs() < 1e-9, "group {group} entry {i}: {v} vs {want}");
        }
    }
}

#[test]
fn kinetic_matches_double_loop_oracle() {
    let skel = toy9();
    let motion = random_motion(&skel, 12, 7);
    let got = kinetic_features(&motion, &skel, "hand").unwrap();
    // Independent oracle: direct FK + velocity + double loop.
    let pos = forward_kinematics(&skel, &motion).unwrap();
    let vel = velocity(&pos, 12).unwrap();
    let joints = skel.group("hand").unwrap();
    let j = skel.n_joints();
    let mut idx = 0;
    for &joint in joints {
        for axis in 0..3 {
            let mut acc = 0.0;
            for t in 0..11 {
                let v = vel[t * j * 3 + joint * 3 + axis];
                acc += v * v;
            }
            let want = acc / 11.0;
            assert!((got[idx] - want).abs() < 1e-9);
            idx += 1;
        }
    }
}

#[test]
fn kinetic_velocity_scaling_is_quadratic() {
    // Pure-translation motion: scaling velocities by c multiplies features by c^2.
    let skel = toy9();
    let mut motion = MotionSequence::rest(&skel, 8, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for v in motion.root_translation.iter_mut() {
        *v = rng.gen_range(-0.2..0.2);
    }
    let mut scaled = motion.clone();
    for v in scaled.root_translation.iter_mut() {
        *v *= 3.0;
    }
    let base = kinetic_features(&motion, &skel, "body").unwrap();
    let big = kinetic_features(&scaled, &skel, "body").unwrap();
    for (a, b) in base.iter().zip(&big) {
        // f32 storage of the scaled translations leaves ~1e-7 relative noise.
        assert!((b - 9.0 * a).abs() < 1e-5 * (1.0 + b.abs()), "{b} vs {}", 9.0 * a);
    }
}

#[test]
fn fid_self_is_zero_and_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let set_a: Vec<Vec<f64>> =
        (0..20).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let set_b: Vec<Vec<f64>> =
        (0..18).map(|_| (0..6).map(|_| rng.gen_range(-0.5..1.5)).collect()).collect();
    let self_fid = fid(&set_a, &set_a).unwrap();
    assert!(self_fid.abs() < 1e-8, "fid(A,A) = {self_fid}");
    let ab = fid(&set_a, &set_b).unwrap();
    let ba = fid(&set_b, &set_a).unwrap();
    assert!((ab - ba).abs() < 1e-8, "symmetry: {ab} vs {ba}");
    assert!(ab > 0.0);
}

#[test]
fn fid_one_dimensional_analytic_case() {
    // N(0,1) vs N(3,1) with population stats injected: 9 exactly.
    let a = GaussianStats { mean: vec![0.0], cov: vec![1.0] };
    let b = GaussianStats { mean: vec![3.0], cov: vec![1.0] };
    let d = fid_from_stats(&a, &b).unwrap();
    assert!((d - 9.0).abs() < 1e-9, "{d}");
}

/// Newton-Schulz square-root iteration, the independent oracle.
fn newton_schulz_sqrt(m: &[f64], d: usize) -> Vec<f64> {
    let norm: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut y: Vec<f64> = m.iter().map(|v| v / norm).collect();
    let mut z = vec![0.0; d * d];
    for i in 0..d {
        z[i * d + i] = 1.0;
    }
    let mul = |a: &[f64], b: &[f64]| -> Vec<f64> {
        let mut c = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let av = a[i * d + k];
                for j in 0..d {
                    c[i * d + j] += av * b[k * d + j];
                }
            }
        }
        c
    };
    for _ in 0..60 {
        let zy = mul(&z, &y);
        let mut t = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                t[i * d + j] = -zy[i * d + j] * 0.5 + if i == j { 1.5 } else { 0.0 };
            }
        }
        y = mul(&y, &t);
        z = mul(&t, &z);
    }
    y.iter().map(|v| v * norm.sqrt()).collect()
}

#[test]
fn sqrtm_matches_newton_schulz_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..5 {
        let d = rng.gen_range(2..7);
        let m = random_psd(d, &mut rng);
        let ours = sqrtm_psd(&m, d).unwrap();
        let oracle = newton_schulz_sqrt(&m, d);
        for (a, b) in ours.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b} (d={d})");
        }
    }
}

#[test]
fn jacobi_reconstructs_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let d = 8;
    let m = random_psd(d, &mut rng);
    let (w, v) = jacobi_eigh(&m, d);
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += v[i * d + k] * w[k] * v[j * d + k];
            }
            assert!((acc - m[i * d + j]).abs() < 1e-9, "({i},{j})");
        }
    }
}

#[test]
fn div_cases() {
    let same = vec![vec![1.0, 2.0]; 5];
    assert_eq!(div(&same).unwrap(), 0.0);
    let two = vec![vec![0.0, 0.0], vec![3.0, 4.0]];
    assert!((div(&two).unwrap() - 5.0).abs() < 1e-12);
    assert!(matches!(div(&same[..1].to_vec()), Err(Error::ConfigError(_))));

    // Brute-force oracle on 10 random points.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let set: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let got = div(&set).unwrap();
    let mut acc = 0.0;
    let mut n = 0;
    for i in 0..10 {
        for j in i + 1..10 {
            acc += set[i]
                .iter()
                .zip(&set[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            n += 1;
        }
    }
    assert!((got - acc / n as f64).abs() < 1e-9);
    // Permutation invariance.
    let mut shuffled = set.clone();
    shuffled.swap(0, 7);
    shuffled.swap(2, 9);
    assert!((div(&shuffled).unwrap() - got).abs() < 1e-12);
}

#[test]
fn kinematic_beats_constant_speed_has_none() {
    let skel = toy9();
    let mut motion = MotionSequence::rest(&skel, 30, 30);
    for t in 0..30 {
        motion.root_translation[t * 3] = 0.05 * t as f32;
    }
    let beats = kinematic_beats(&motion, &skel).unwrap();
    assert!(beats.is_empty(), "constant speed has no minima, got {beats:?}");
}

#[test]
fn kinematic_beats_triangle_wave_reversals() {
    // Root oscillates along x with direction reversals every 12 frames;
    // speed minima land at the reversal frames.
    let skel = toy9();
    let t = 60;
    let period = 24usize;
    let mut motion = MotionSequence::rest(&skel, t, 30);
    for f in 0..t {
        let phase = f % period;
        let x = if phase < period / 2 { phase as f32 } else { (period - phase) as f32 };
        motion.root_translation[f * 3] = 0.05 * x;
    }
    // Smooth the triangle apex with cosine easing so speed dips rather than
    // staying constant: use the eased profile directly.
    for f in 0..t {
        let u = f as f64 / period as f64 * 2.0 * std::f64::consts::PI;
        motion.root_translation[f * 3] = (0.3 * (1.0 - u.cos()) / 2.0) as f32;
    }
    let beats = kinematic_beats(&motion, &skel).unwrap();
    // Reversals of cos happen every period/2 = 12 frames (speed ~ |sin|).
    assert!(!beats.is_empty());
    for b in &beats {
        let rem = b % (period / 2);
        let dist = rem.min(period / 2 - rem);
        assert!(dist <= 1, "beat {b} not at a reversal");
    }
    // Invariance to global translation offset.
    let mut shifted = motion.clone();
    for f in 0..t {
        shifted.root_translation[f * 3 + 1] += 2.5;
    }
    assert_eq!(kinematic_beats(&shifted, &skel).unwrap(), beats);
}

#[test]
fn bas_cases() {
    // Identical beat sets score 1.
    let beats = vec![10usize, 40, 70];
    assert!((bas(&beats, &beats, 3.0).unwrap() - 1.0).abs() < 1e-12);
    // Hand case: music beat 10, motion beat 13, sigma 3.
    let s = bas(&[10], &[13], 3.0).unwrap();
    assert!((s - 0.60653).abs() < 1e-5, "{s}");
    // Far beats: effectively zero.
    let far = bas(&[10], &[100], 3.0).unwrap();
    assert!(far < 1e-20);
    // Empty music errors, empty motion scores 0.
    assert!(bas(&[], &[10], 3.0).is_err());
    assert_eq!(bas(&[10], &[], 3.0).unwrap(), 0.0);
    // Bounded in [0,1] and monotone as a beat moves closer.
    let mut prev = 0.0;
    for d in (0..10).rev() {
        let s = bas(&[50], &[50 + d], 3.0).unwrap();
        assert!((0.0..=1.0).contains(&s));
        assert!(s >= prev);
        prev = s;
    }
}
