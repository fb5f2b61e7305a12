//! Forward kinematics: world(root) = tau, world(j) = world(parent) +
//! R_world(parent) * offset_j, R_world(j) = R_world(parent) * R_local(j).

use crate::error::{Error, Result};
use crate::kin::{rotation, MotionSequence, Skeleton};

/// World-space joint positions, row-major T x J x 3 (f64).
pub fn forward_kinematics(skel: &Skeleton, motion: &MotionSequence) -> Result<Vec<f64>> {
    let j = skel.n_joints();
    if motion.n_joints != j {
        return Err(Error::ShapeError(format!(
            "motion has {} joints, skeleton {}",
            motion.n_joints, j
        )));
    }
    let t = motion.n_frames;
    let mut pos = vec![0.0f64; t * j * 3];
    let mut world = vec![[0.0f64; 9]; j];
    for tt in 0..t {
        for jj in 0..j {
            let base = tt * j * 6 + jj * 6;
            let six: [f64; 6] = std::array::from_fn(|i| motion.rotations6d[base + i] as f64);
            let local = rotation::sixd_to_rotmat(&six)?;
            if jj == 0 {
                world[0] = local;
                for r in 0..3 {
                    pos[tt * j * 3 + r] = motion.root_translation[tt * 3 + r] as f64;
                }
            } else {
                let par = skel.joints[jj].parent as usize;
                let parent_rot = world[par];
                world[jj] = rotation::matmul3(&parent_rot, &local);
                let off = skel.joints[jj].offset;
                for r in 0..3 {
                    pos[tt * j * 3 + jj * 3 + r] = pos[tt * j * 3 + par * 3 + r]
                        + parent_rot[r * 3] * off[0]
                        + parent_rot[r * 3 + 1] * off[1]
                        + parent_rot[r * 3 + 2] * off[2];
                }
            }
        }
    }
    Ok(pos)
}
