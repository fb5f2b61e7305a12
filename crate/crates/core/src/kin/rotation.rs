//! 6D rotation representation: the first two matrix columns, orthonormalized
//! by Gram-Schmidt.

use crate::error::{Error, Result};

/// 6D value of the identity rotation.
pub const IDENTITY_6D: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

const EPS: f64 = 1e-8;

/// Gram-Schmidt: b1 = norm(a1), b2 = norm(a2 - (a2.b1) b1), b3 = b1 x b2.
/// Returns a row-major 3x3 with columns [b1, b2, b3].
pub fn sixd_to_rotmat(r: &[f64; 6]) -> Result<[f64; 9]> {
    let a1 = [r[0], r[1], r[2]];
    let a2 = [r[3], r[4], r[5]];
    let n1 = (a1[0] * a1[0] + a1[1] * a1[1] + a1[2] * a1[2]).sqrt();
    if n1 <= EPS {
        return Err(Error::DegenerateRotation(format!("first 3-vector norm {n1:.2e}")));
    }
    let b1 = [a1[0] / n1, a1[1] / n1, a1[2] / n1];
    let d = a2[0] * b1[0] + a2[1] * b1[1] + a2[2] * b1[2];
    let u2 = [a2[0] - d * b1[0], a2[1] - d * b1[1], a2[2] - d * b1[2]];
    let n2 = (u2[0] * u2[0] + u2[1] * u2[1] + u2[2] * u2[2]).sqrt();
    if n2 <= EPS {
        return Err(Error::DegenerateRotation(format!("residual norm {n2:.2e} (parallel input)")));
    }
    let b2 = [u2[0] / n2, u2[1] / n2, u2[2] / n2];
    let b3 = [
        b1[1] * b2[2] - b1[2] * b2[1],
        b1[2] * b2[0] - b1[0] * b2[2],
        b1[0] * b2[1] - b1[1] * b2[0],
    ];
    Ok([b1[0], b2[0], b3[0], b1[1], b2[1], b3[1], b1[2], b2[2], b3[2]])
}

/// First two columns of a proper rotation matrix (row-major 3x3).
pub fn rotmat_to_sixd(m: &[f64; 9]) -> Result<[f64; 6]> {
    // Orthonormality within 1e-4: R^T R = I.
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += m[k * 3 + i] * m[k * 3 + j];
            }
            let want = if i == j { 1.0 } else { 0.0 };
            if (acc - want).abs() > 1e-4 {
                return Err(Error::InvalidRotation(format!(
                    "R^T R [{i},{j}] = {acc:.6}, expected {want}"
                )));
            }
        }
    }
    if det3(m) < 0.0 {
        return Err(Error::InvalidRotation("reflection (det < 0)".into()));
    }
    Ok([m[0], m[3], m[6], m[1], m[4], m[7]])
}

pub fn det3(m: &[f64; 9]) -> f64 {
    m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6])
}

/// Row-major 3x3 product.
pub fn matmul3(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut c = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
            }
        }
    }
    c
}

/// Rotation about an axis-aligned axis (0=x, 1=y, 2=z) by `angle` radians.
pub fn axis_rotation(axis: usize, angle: f64) -> [f64; 9] {
    let (s, c) = angle.sin_cos();
    match axis {
        0 => [1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c],
        1 => [c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c],
        2 => [c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0],
        _ => panic!("axis must be 0..3"),
    }
}
