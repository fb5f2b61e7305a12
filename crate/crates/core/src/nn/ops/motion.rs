//! Differentiable motion ops: batched 6D -> rotation matrices, forward
//! kinematics over a joint tree, temporal differencing, and column masking.
//!
//! Layouts: 6D rotations [T, J*6] (first two matrix columns per joint),
//! rotation matrices [T, J*9] row-major per joint, positions [T, J*3].

use crate::nn::graph::{BackCtx, Backward, Graph, NodeId};
use crate::nn::tensor::{Elem, Tensor};

const DEGENERATE_EPS: f64 = 1e-8;

#[inline]
fn cross<E: Elem>(a: [E; 3], b: [E; 3]) -> [E; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
fn dot3<E: Elem>(a: [E; 3], b: [E; 3]) -> E {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn norm3<E: Elem>(a: [E; 3]) -> E {
    dot3(a, a).sqrt()
}

/// Gram-Schmidt a single 6-vector into orthonormal columns (b1,b2,b3).
/// Degenerate norms are clamped to keep the op total; the validating public
/// API in `kin` rejects them before they reach here.
pub fn gram_schmidt_frame<E: Elem>(v: &[E]) -> ([E; 3], [E; 3], [E; 3]) {
    let a1 = [v[0], v[1], v[2]];
    let a2 = [v[3], v[4], v[5]];
    let eps = E::from_f64(DEGENERATE_EPS);
    let n1 = norm3(a1).maximum(eps);
    let b1 = [a1[0] / n1, a1[1] / n1, a1[2] / n1];
    let d = dot3(a2, b1);
    let u2 = [a2[0] - d * b1[0], a2[1] - d * b1[1], a2[2] - d * b1[2]];
    let n2 = norm3(u2).maximum(eps);
    let b2 = [u2[0] / n2, u2[1] / n2, u2[2] / n2];
    let b3 = cross(b1, b2);
    (b1, b2, b3)
}

struct SixdBack {
    joints: usize,
}

impl<E: Elem> Backward<E> for SixdBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let x = ctx.parents[0];
        let (t, _) = x.dims2();
        let j = self.joints;
        let g = ctx.grad.data();
        let xd = x.data();
        let eps = E::from_f64(DEGENERATE_EPS);
        let mut gx = vec![E::ZERO; t * j * 6];
        for row in 0..t {
            for jj in 0..j {
                let xin = &xd[row * j * 6 + jj * 6..row * j * 6 + jj * 6 + 6];
                let gr = &g[row * j * 9 + jj * 9..row * j * 9 + jj * 9 + 9];
                // Recompute intermediates.
                let a1 = [xin[0], xin[1], xin[2]];
                let a2 = [xin[3], xin[4], xin[5]];
                let n1 = norm3(a1).maximum(eps);
                let b1 = [a1[0] / n1, a1[1] / n1, a1[2] / n1];
                let d = dot3(a2, b1);
                let u2 = [a2[0] - d * b1[0], a2[1] - d * b1[1], a2[2] - d * b1[2]];
                let n2 = norm3(u2).maximum(eps);
                let b2 = [u2[0] / n2, u2[1] / n2, u2[2] / n2];
                // Output columns: R[r][0]=b1[r], R[r][1]=b2[r], R[r][2]=b3[r].
                let gb3 = [gr[2], gr[5], gr[8]];
                let mut gb2 = [gr[1], gr[4], gr[7]];
                let mut gb1 = [gr[0], gr[3], gr[6]];
                // b3 = b1 x b2
                let c1 = cross(b2, gb3);
                let c2 = cross(gb3, b1);
                for i in 0..3 {
                    gb1[i] += c1[i];
                    gb2[i] += c2[i];
                }
                // b2 = u2/n2
                let dp = dot3(b2, gb2);
                let gu2 = [(gb2[0] - b2[0] * dp) / n2, (gb2[1] - b2[1] * dp) / n2, (gb2[2] - b2[2] * dp) / n2];
                // u2 = a2 - (a2.b1) b1
                let gu2_b1 = dot3(gu2, b1);
                let ga2 = [gu2[0] - b1[0] * gu2_b1, gu2[1] - b1[1] * gu2_b1, gu2[2] - b1[2] * gu2_b1];
                for i in 0..3 {
                    gb1[i] += -d * gu2[i] - gu2_b1 * a2[i];
                }
                // b1 = a1/n1
                let dp1 = dot3(b1, gb1);
                let ga1 = [(gb1[0] - b1[0] * dp1) / n1, (gb1[1] - b1[1] * dp1) / n1, (gb1[2] - b1[2] * dp1) / n1];
                let out = &mut gx[row * j * 6 + jj * 6..row * j * 6 + jj * 6 + 6];
                out[0] = ga1[0];
                out[1] = ga1[1];
                out[2] = ga1[2];
                out[3] = ga2[0];
                out[4] = ga2[1];
                out[5] = ga2[2];
            }
        }
        vec![Some(Tensor::from_vec(x.shape().to_vec(), gx))]
    }
}

/// Batched 6D -> rotation matrices: [T, J*6] -> [T, J*9].
pub fn sixd_to_rotmat_batch<E: Elem>(g: &mut Graph<E>, x: NodeId, joints: usize) -> NodeId {
    let v = g.value(x);
    let (t, w) = v.dims2();
    assert_eq!(w, joints * 6, "sixd width mismatch");
    let mut out = Vec::with_capacity(t * joints * 9);
    for row in 0..t {
        for jj in 0..joints {
            let xin = &v.data()[row * w + jj * 6..row * w + jj * 6 + 6];
            let (b1, b2, b3) = gram_schmidt_frame(xin);
            for r in 0..3 {
                out.push(b1[r]);
                out.push(b2[r]);
                out.push(b3[r]);
            }
        }
    }
    g.push(Tensor::from_vec(vec![t, joints * 9], out), vec![x], Box::new(SixdBack { joints }))
}

struct FkBack<E: Elem> {
    parents_idx: Vec<isize>,
    offsets: Vec<[E; 3]>,
    /// World rotations per frame, [T, J*9]; stored by the tracked forward.
    world_rot: Vec<E>,
}

impl<E: Elem> Backward<E> for FkBack<E> {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let (rot, _tau) = (ctx.parents[0], ctx.parents[1]);
        let (t, _) = rot.dims2();
        let j = self.parents_idx.len();
        let g = ctx.grad.data();
        let rl = rot.data();
        let rw = &self.world_rot;

        let mut grot = vec![E::ZERO; t * j * 9];
        let mut gtau = vec![E::ZERO; t * 3];
        let mut g_rw = vec![E::ZERO; j * 9];
        let mut g_p = vec![E::ZERO; j * 3];

        for tt in 0..t {
            for v in g_rw.iter_mut() {
                *v = E::ZERO;
            }
            for (i, v) in g_p.iter_mut().enumerate() {
                *v = g[tt * j * 3 + i];
            }
            for jj in (1..j).rev() {
                let par = self.parents_idx[jj] as usize;
                let off = self.offsets[jj];
                // p[j] = p[par] + Rw[par] * off
                for r in 0..3 {
                    let gp = g_p[jj * 3 + r];
                    g_p[par * 3 + r] += gp;
                    for c in 0..3 {
                        g_rw[par * 9 + r * 3 + c] += gp * off[c];
                    }
                }
                // Rw[j] = Rw[par] * Rl[j]
                let rw_par = &rw[tt * j * 9 + par * 9..tt * j * 9 + par * 9 + 9];
                let rl_j = &rl[tt * j * 9 + jj * 9..tt * j * 9 + jj * 9 + 9];
                let mut g_rwj = [E::ZERO; 9];
                g_rwj.copy_from_slice(&g_rw[jj * 9..jj * 9 + 9]);
                for r in 0..3 {
                    for c in 0..3 {
                        // gRl[j] = Rw[par]^T * gRw[j]
                        let mut acc = E::ZERO;
                        for p in 0..3 {
                            acc += rw_par[p * 3 + r] * g_rwj[p * 3 + c];
                        }
                        grot[tt * j * 9 + jj * 9 + r * 3 + c] += acc;
                        // gRw[par] += gRw[j] * Rl[j]^T
                        let mut acc2 = E::ZERO;
                        for p in 0..3 {
                            acc2 += g_rwj[r * 3 + p] * rl_j[c * 3 + p];
                        }
                        g_rw[par * 9 + r * 3 + c] += acc2;
                    }
                }
            }
            // Root: Rw[0] = Rl[0], p[0] = tau.
            for i in 0..9 {
                grot[tt * j * 9 + i] += g_rw[i];
            }
            for r in 0..3 {
                gtau[tt * 3 + r] = g_p[r];
            }
        }
        vec![
            if ctx.needs[0] { Some(Tensor::from_vec(rot.shape().to_vec(), grot)) } else { None },
            if ctx.needs[1] { Some(Tensor::from_vec(ctx.parents[1].shape().to_vec(), gtau)) } else { None },
        ]
    }
}

/// Forward kinematics over a topologically sorted joint tree.
/// rot: [T, J*9] local rotations, tau: [T, 3] root translation.
/// parents_idx[0] must be -1; offsets are rest-pose bone vectors.
pub fn fk<E: Elem>(
    g: &mut Graph<E>,
    rot: NodeId,
    tau: NodeId,
    parents_idx: &[isize],
    offsets: &[[E; 3]],
) -> NodeId {
    let (vr, vt) = (g.value(rot), g.value(tau));
    let j = parents_idx.len();
    let (t, w) = vr.dims2();
    assert_eq!(w, j * 9, "fk rotation width mismatch");
    assert_eq!(vt.dims2(), (t, 3), "fk tau shape mismatch");
    assert_eq!(offsets.len(), j);
    let rl = vr.data();
    let taud = vt.data();
    let track = g.track();

    let mut pos = vec![E::ZERO; t * j * 3];
    let mut world = vec![E::ZERO; t * j * 9];
    for tt in 0..t {
        let wbase = tt * j * 9;
        let pbase = tt * j * 3;
        world[wbase..wbase + 9].copy_from_slice(&rl[wbase..wbase + 9]);
        pos[pbase..pbase + 3].copy_from_slice(&taud[tt * 3..tt * 3 + 3]);
        for jj in 1..j {
            let par = parents_idx[jj] as usize;
            let off = offsets[jj];
            let (rw_par, rest) = world[wbase..].split_at_mut(jj * 9);
            let rw_par = &rw_par[par * 9..par * 9 + 9];
            let rl_j = &rl[wbase + jj * 9..wbase + jj * 9 + 9];
            let rw_j = &mut rest[..9];
            for r in 0..3 {
                for c in 0..3 {
                    let mut acc = E::ZERO;
                    for p in 0..3 {
                        acc += rw_par[r * 3 + p] * rl_j[p * 3 + c];
                    }
                    rw_j[r * 3 + c] = acc;
                }
            }
            for r in 0..3 {
                let mut acc = pos[pbase + par * 3 + r];
                for c in 0..3 {
                    acc += rw_par[r * 3 + c] * off[c];
                }
                pos[pbase + jj * 3 + r] = acc;
            }
        }
    }
    g.push(
        Tensor::from_vec(vec![t, j * 3], pos),
        vec![rot, tau],
        Box::new(FkBack {
            parents_idx: parents_idx.to_vec(),
            offsets: offsets.to_vec(),
            world_rot: if track { world } else { Vec::new() },
        }),
    )
}

struct TimeDiffBack;

impl<E: Elem> Backward<E> for TimeDiffBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let x = ctx.parents[0];
        let (t, k) = x.dims2();
        let g = ctx.grad.data();
        let mut gx = vec![E::ZERO; t * k];
        for tt in 0..t - 1 {
            for c in 0..k {
                let gv = g[tt * k + c];
                gx[(tt + 1) * k + c] += gv;
                gx[tt * k + c] = gx[tt * k + c] - gv;
            }
        }
        vec![Some(Tensor::from_vec(x.shape().to_vec(), gx))]
    }
}

/// Forward difference along rows: [T, K] -> [T-1, K].
pub fn time_diff<E: Elem>(g: &mut Graph<E>, x: NodeId) -> NodeId {
    let v = g.value(x);
    let (t, k) = v.dims2();
    assert!(t >= 2, "time_diff needs at least two frames");
    let mut out = Vec::with_capacity((t - 1) * k);
    for tt in 0..t - 1 {
        for c in 0..k {
            out.push(v.data()[(tt + 1) * k + c] - v.data()[tt * k + c]);
        }
    }
    g.push(Tensor::from_vec(vec![t - 1, k], out), vec![x], Box::new(TimeDiffBack))
}

struct MaskReplaceBack {
    replaced: Vec<bool>,
}

impl<E: Elem> Backward<E> for MaskReplaceBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let x = ctx.parents[0];
        let (_, cols) = x.dims2();
        let g = ctx
            .grad
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if self.replaced[i % cols] { E::ZERO } else { v })
            .collect();
        vec![Some(Tensor::from_vec(x.shape().to_vec(), g))]
    }
}

/// Replace selected columns with per-column constants; kept columns pass
/// through untouched (and keep their gradient).
pub fn mask_replace<E: Elem>(g: &mut Graph<E>, x: NodeId, replacement: &[Option<E>]) -> NodeId {
    let v = g.value(x);
    let (rows, cols) = v.dims2();
    assert_eq!(replacement.len(), cols, "mask_replace width mismatch");
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(match replacement[c] {
                Some(rv) => rv,
                None => v.data()[r * cols + c],
            });
        }
    }
    let replaced: Vec<bool> = replacement.iter().map(|r| r.is_some()).collect();
    g.push(Tensor::from_vec(v.shape().to_vec(), out), vec![x], Box::new(MaskReplaceBack { replaced }))
}
