//! Fused layer ops: layer norm, multi-head attention, depthwise causal
//! convolution, FiLM modulation.

use crate::nn::graph::{BackCtx, Backward, Graph, NodeId};
use crate::nn::tensor::{Elem, Tensor};

struct LayerNormBack {
    eps: f64,
}

impl<E: Elem> Backward<E> for LayerNormBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let (x, gamma) = (ctx.parents[0], ctx.parents[1]);
        let (rows, d) = x.dims2();
        let gd = ctx.grad.data();
        let xd = x.data();
        let gam = gamma.data();
        let inv_d = E::from_f64(1.0 / d as f64);
        let eps = E::from_f64(self.eps);

        let mut gx = vec![E::ZERO; rows * d];
        let mut ggam = vec![E::ZERO; d];
        let mut gbeta = vec![E::ZERO; d];
        for r in 0..rows {
            let xr = &xd[r * d..(r + 1) * d];
            let gr = &gd[r * d..(r + 1) * d];
            let mut mean = E::ZERO;
            for &v in xr {
                mean += v;
            }
            mean = mean * inv_d;
            let mut var = E::ZERO;
            for &v in xr {
                let c = v - mean;
                var += c * c;
            }
            var = var * inv_d;
            let rstd = E::ONE / (var + eps).sqrt();

            // ghat = gy * gamma; accumulate the two row means.
            let mut m1 = E::ZERO;
            let mut m2 = E::ZERO;
            for i in 0..d {
                let xhat = (xr[i] - mean) * rstd;
                let gh = gr[i] * gam[i];
                m1 += gh;
                m2 += gh * xhat;
                ggam[i] += gr[i] * xhat;
                gbeta[i] += gr[i];
            }
            m1 = m1 * inv_d;
            m2 = m2 * inv_d;
            for i in 0..d {
                let xhat = (xr[i] - mean) * rstd;
                let gh = gr[i] * gam[i];
                gx[r * d + i] = rstd * (gh - m1 - xhat * m2);
            }
        }
        vec![
            Some(Tensor::from_vec(x.shape().to_vec(), gx)),
            if ctx.needs[1] { Some(Tensor::from_vec(gamma.shape().to_vec(), ggam)) } else { None },
            if ctx.needs[2] { Some(Tensor::from_vec(vec![d], gbeta)) } else { None },
        ]
    }
}

/// Per-row (last axis) normalization followed by affine gamma/beta.
pub fn layer_norm<E: Elem>(g: &mut Graph<E>, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
    let v = g.value(x);
    let (rows, d) = v.dims2();
    assert_eq!(g.value(gamma).numel(), d, "layer_norm gamma width");
    assert_eq!(g.value(beta).numel(), d, "layer_norm beta width");
    let gam = g.value(gamma).data().to_vec();
    let bet = g.value(beta).data().to_vec();
    let inv_d = E::from_f64(1.0 / d as f64);
    let epse = E::from_f64(eps);
    let mut out = Vec::with_capacity(rows * d);
    for r in 0..rows {
        let xr = &v.data()[r * d..(r + 1) * d];
        let mut mean = E::ZERO;
        for &x in xr {
            mean += x;
        }
        mean = mean * inv_d;
        let mut var = E::ZERO;
        for &x in xr {
            let c = x - mean;
            var += c * c;
        }
        var = var * inv_d;
        let rstd = E::ONE / (var + epse).sqrt();
        for i in 0..d {
            out.push((xr[i] - mean) * rstd * gam[i] + bet[i]);
        }
    }
    let y = Tensor::from_vec(v.shape().to_vec(), out);
    g.push(y, vec![x, gamma, beta], Box::new(LayerNormBack { eps }))
}

struct AttentionBack<E: Elem> {
    heads: usize,
    /// Post-dropout attention weights per head (tq*tk each); equals the
    /// softmax output when dropout is off.
    post: Vec<Vec<E>>,
    /// Pre-dropout softmax probabilities; only stored when dropout is on.
    pre: Option<Vec<Vec<E>>>,
    /// Inverted-dropout mask (entries 0 or 1/(1-p)); empty when dropout off.
    masks: Vec<Vec<E>>,
}

impl<E: Elem> Backward<E> for AttentionBack<E> {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let (q, k, v) = (ctx.parents[0], ctx.parents[1], ctx.parents[2]);
        let (tq, d) = q.dims2();
        let (tk, _) = k.dims2();
        let dh = d / self.heads;
        let scale = E::from_f64(1.0 / (dh as f64).sqrt());
        let go = ctx.grad.data();

        let mut gq = vec![E::ZERO; tq * d];
        let mut gk = vec![E::ZERO; tk * d];
        let mut gv = vec![E::ZERO; tk * d];
        let mut gs = vec![E::ZERO; tq * tk];

        for h in 0..self.heads {
            let off = h * dh;
            let post = &self.post[h];
            let pre = self.pre.as_ref().map(|p| &p[h]).unwrap_or(post);
            // gP~ = gO_h * V_h^T
            E::gemm_strided(
                tq, dh, tk, E::ONE,
                go, off, d as isize, 1,
                v.data(), off, 1, d as isize, // V_h^T via swapped strides
                E::ZERO, &mut gs, 0, tk as isize, 1,
            );
            // gV_h = P~^T * gO_h
            E::gemm_strided(
                tk, tq, dh, E::ONE,
                post, 0, 1, tk as isize, // P~^T
                go, off, d as isize, 1,
                E::ONE, &mut gv, off, d as isize, 1,
            );
            // Dropout backward (P~ = P .* mask), then softmax backward, in place.
            if !self.masks.is_empty() {
                for (gsv, &m) in gs.iter_mut().zip(&self.masks[h]) {
                    *gsv = *gsv * m;
                }
            }
            for r in 0..tq {
                let row = &mut gs[r * tk..(r + 1) * tk];
                let prow = &pre[r * tk..(r + 1) * tk];
                let mut dot = E::ZERO;
                for i in 0..tk {
                    dot += row[i] * prow[i];
                }
                for i in 0..tk {
                    row[i] = prow[i] * (row[i] - dot);
                }
            }
            // gQ_h += gS * K_h * scale ; gK_h += gS^T * Q_h * scale
            E::gemm_strided(
                tq, tk, dh, scale,
                &gs, 0, tk as isize, 1,
                k.data(), off, d as isize, 1,
                E::ONE, &mut gq, off, d as isize, 1,
            );
            E::gemm_strided(
                tk, tq, dh, scale,
                &gs, 0, 1, tk as isize,
                q.data(), off, d as isize, 1,
                E::ONE, &mut gk, off, d as isize, 1,
            );
        }
        vec![
            if ctx.needs[0] { Some(Tensor::from_vec(q.shape().to_vec(), gq)) } else { None },
            if ctx.needs[1] { Some(Tensor::from_vec(k.shape().to_vec(), gk)) } else { None },
            if ctx.needs[2] { Some(Tensor::from_vec(v.shape().to_vec(), gv)) } else { None },
        ]
    }
}

/// Streaming attention forward: K and V are transposed once into [d, tk]
/// buffers so every inner loop is a contiguous length-tk axpy or dot, then
/// each query row computes all-head scores into a small scratch, softmax,
/// and the value reduction — no T x T matrix is ever materialized. Query
/// rows write disjoint output, so the parallel result is bit-identical.
fn attention_streaming<E: Elem>(
    vq: &Tensor<E>,
    vk: &Tensor<E>,
    vv: &Tensor<E>,
    heads: usize,
    scale: E,
) -> Tensor<E> {
    let (tq, d) = vq.dims2();
    let (tk, _) = vk.dims2();
    let dh = d / heads;
    let qd = vq.data();
    let kt = crate::nn::tensor::transpose_raw(vk.data(), tk, d);
    let vt = crate::nn::tensor::transpose_raw(vv.data(), tk, d);
    let mut out = vec![E::ZERO; tq * d];

    // Query rows go through in blocks so each K^T/V^T row loads once per
    // block instead of once per query.
    const BLOCK: usize = 8;
    let block_job = |i0: usize, out_block: &mut [E], scores: &mut [E]| {
        let rows = out_block.len() / d;
        for s in scores.iter_mut() {
            *s = E::ZERO;
        }
        // scores[b][h] += q[i0+b][p] * K^T[p, :].
        for p in 0..d {
            let h = p / dh;
            let src = &kt[p * tk..(p + 1) * tk];
            for b in 0..rows {
                let qv = qd[(i0 + b) * d + p] * scale;
                let dst = &mut scores[(b * heads + h) * tk..(b * heads + h + 1) * tk];
                for (a, &kv) in dst.iter_mut().zip(src) {
                    *a += qv * kv;
                }
            }
        }
        for row in scores.chunks_exact_mut(tk).take(rows * heads) {
            let mut mx = row[0];
            for &s in row.iter() {
                mx = mx.maximum(s);
            }
            let mut sum = E::ZERO;
            for s in row.iter_mut() {
                *s = (*s - mx).fast_exp();
                sum += *s;
            }
            let inv = E::ONE / sum;
            for s in row.iter_mut() {
                *s = *s * inv;
            }
        }
        // out[b][p] = probs[b][h] . V^T[p, :].
        for p in 0..d {
            let h = p / dh;
            let src = &vt[p * tk..(p + 1) * tk];
            for b in 0..rows {
                let probs = &scores[(b * heads + h) * tk..(b * heads + h + 1) * tk];
                let mut acc = E::ZERO;
                for (&a, &vv) in probs.iter().zip(src) {
                    acc += a * vv;
                }
                out_block[b * d + p] = acc;
            }
        }
    };

    // Parallelize across query blocks only when there is real work.
    if tq * tk >= 1 << 18 {
        use rayon::prelude::*;
        out.par_chunks_mut(d * BLOCK).enumerate().for_each(|(blk, out_block)| {
            let mut scratch = vec![E::ZERO; BLOCK * heads * tk];
            block_job(blk * BLOCK, out_block, &mut scratch);
        });
    } else {
        let mut scratch = vec![E::ZERO; BLOCK * heads * tk];
        for (blk, out_block) in out.chunks_mut(d * BLOCK).enumerate() {
            block_job(blk * BLOCK, out_block, &mut scratch);
        }
    }
    Tensor::from_vec(vec![tq, d], out)
}

/// Scaled-dot-product multi-head attention over already-projected q/k/v.
/// Heads are contiguous column blocks of width d/heads. Softmax rows sum to
/// one; optional inverted dropout on the attention weights.
pub fn attention<E: Elem>(
    g: &mut Graph<E>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    heads: usize,
    dropout_p: f64,
    rng: Option<&mut dyn rand::RngCore>,
) -> NodeId {
    let (vq, vk, vv) = (g.value(q), g.value(k), g.value(v));
    let (tq, d) = vq.dims2();
    let (tk, dk) = vk.dims2();
    assert_eq!(d, dk, "attention q/k width mismatch");
    assert_eq!(vv.dims2(), (tk, d), "attention k/v shape mismatch");
    assert_eq!(d % heads, 0, "heads must divide feature dim");
    let dh = d / heads;
    let scale = E::from_f64(1.0 / (dh as f64).sqrt());
    let track = g.track();

    // Inference path: stream rows, never materialize the score matrix.
    if !track && !(dropout_p > 0.0 && rng.is_some()) {
        let y = attention_streaming(vq, vk, vv, heads, scale);
        return g.constant(y);
    }

    let mut out = vec![E::ZERO; tq * d];
    let mut scores = vec![E::ZERO; tq * tk];
    let mut probs_stash: Vec<Vec<E>> = Vec::new();
    let mut pre_stash: Vec<Vec<E>> = Vec::new();
    let mut masks_stash: Vec<Vec<E>> = Vec::new();
    let use_dropout = dropout_p > 0.0 && rng.is_some();
    let mut rng = rng;

    for h in 0..heads {
        let off = h * dh;
        // S = Q_h K_h^T * scale
        E::gemm_strided(
            tq, dh, tk, scale,
            vq.data(), off, d as isize, 1,
            vk.data(), off, 1, d as isize,
            E::ZERO, &mut scores, 0, tk as isize, 1,
        );
        // Row softmax in place.
        for r in 0..tq {
            let row = &mut scores[r * tk..(r + 1) * tk];
            let mut mx = row[0];
            for &s in row.iter() {
                mx = mx.maximum(s);
            }
            let mut sum = E::ZERO;
            for s in row.iter_mut() {
                *s = (*s - mx).fast_exp();
                sum += *s;
            }
            let inv = E::ONE / sum;
            for s in row.iter_mut() {
                *s = *s * inv;
            }
        }
        if track && use_dropout {
            pre_stash.push(scores.clone());
        }
        if use_dropout {
            let rng = rng.as_deref_mut().unwrap();
            let keep = E::from_f64(1.0 / (1.0 - dropout_p));
            let mut mask = vec![E::ZERO; tq * tk];
            for (s, m) in scores.iter_mut().zip(mask.iter_mut()) {
                let keep_it = rng.next_u64() as f64 / u64::MAX as f64 >= dropout_p;
                *m = if keep_it { keep } else { E::ZERO };
                *s = *s * *m;
            }
            if track {
                masks_stash.push(mask);
            }
        }
        // O_h = P~ V_h
        E::gemm_strided(
            tq, tk, dh, E::ONE,
            &scores, 0, tk as isize, 1,
            vv.data(), off, d as isize, 1,
            E::ZERO, &mut out, off, d as isize, 1,
        );
        if track {
            probs_stash.push(scores.clone());
        }
    }
    let y = Tensor::from_vec(vec![tq, d], out);
    g.push(
        y,
        vec![q, k, v],
        Box::new(AttentionBack {
            heads,
            post: probs_stash,
            pre: if pre_stash.is_empty() { None } else { Some(pre_stash) },
            masks: masks_stash,
        }),
    )
}

struct ConvBack;

impl<E: Elem> Backward<E> for ConvBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let (x, ker) = (ctx.parents[0], ctx.parents[1]);
        let (t, d) = x.dims2();
        let (ksz, _) = ker.dims2();
        let gd = ctx.grad.data();

        let mut gx = vec![E::ZERO; t * d];
        let mut gker = vec![E::ZERO; ksz * d];
        let mut gbias = vec![E::ZERO; d];
        for tt in 0..t {
            for i in 0..ksz {
                let src = tt as isize - (ksz as isize - 1) + i as isize;
                if src < 0 {
                    continue;
                }
                let src = src as usize;
                for c in 0..d {
                    let go = gd[tt * d + c];
                    gx[src * d + c] += ker.data()[i * d + c] * go;
                    gker[i * d + c] += x.data()[src * d + c] * go;
                }
            }
            for c in 0..d {
                gbias[c] += gd[tt * d + c];
            }
        }
        vec![
            if ctx.needs[0] { Some(Tensor::from_vec(x.shape().to_vec(), gx)) } else { None },
            if ctx.needs[1] { Some(Tensor::from_vec(ker.shape().to_vec(), gker)) } else { None },
            if ctx.needs[2] { Some(Tensor::from_vec(vec![d], gbias)) } else { None },
        ]
    }
}

/// Depthwise causal 1-D convolution: y[t,c] = sum_i ker[i,c] * x[t-k+1+i, c] + bias[c],
/// zero-padded on the left so y[t] never sees frames after t.
pub fn conv1d_causal<E: Elem>(g: &mut Graph<E>, x: NodeId, kernel: NodeId, bias: NodeId) -> NodeId {
    let (vx, vk, vb) = (g.value(x), g.value(kernel), g.value(bias));
    let (t, d) = vx.dims2();
    let (ksz, dk) = vk.dims2();
    assert_eq!(d, dk, "conv kernel channel mismatch");
    assert_eq!(vb.numel(), d, "conv bias width mismatch");
    let mut out = vec![E::ZERO; t * d];
    for tt in 0..t {
        for c in 0..d {
            out[tt * d + c] = vb.data()[c];
        }
        for i in 0..ksz {
            let src = tt as isize - (ksz as isize - 1) + i as isize;
            if src < 0 {
                continue;
            }
            let src = src as usize;
            for c in 0..d {
                out[tt * d + c] += vk.data()[i * d + c] * vx.data()[src * d + c];
            }
        }
    }
    g.push(Tensor::from_vec(vec![t, d], out), vec![x, kernel, bias], Box::new(ConvBack))
}

struct FilmBack;

impl<E: Elem> Backward<E> for FilmBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let (x, gamma) = (ctx.parents[0], ctx.parents[1]);
        let (rows, d) = x.dims2();
        let gd = ctx.grad.data();
        let gx = if ctx.needs[0] {
            let gam = gamma.data();
            let mut gx = vec![E::ZERO; rows * d];
            for r in 0..rows {
                for c in 0..d {
                    gx[r * d + c] = gd[r * d + c] * (E::ONE + gam[c]);
                }
            }
            Some(Tensor::from_vec(x.shape().to_vec(), gx))
        } else {
            None
        };
        let ggam = if ctx.needs[1] {
            let mut gg = vec![E::ZERO; d];
            for r in 0..rows {
                for c in 0..d {
                    gg[c] += gd[r * d + c] * x.data()[r * d + c];
                }
            }
            Some(Tensor::from_vec(gamma.shape().to_vec(), gg))
        } else {
            None
        };
        let gbeta = if ctx.needs[2] {
            let mut gb = vec![E::ZERO; d];
            for r in 0..rows {
                for c in 0..d {
                    gb[c] += gd[r * d + c];
                }
            }
            Some(Tensor::from_vec(ctx.parents[2].shape().to_vec(), gb))
        } else {
            None
        };
        vec![gx, ggam, gbeta]
    }
}

/// Feature-wise modulation: y = (1 + gamma) .* x + beta, gamma/beta length-d
/// rows broadcast over time. The +1 keeps zero-initialized heads an identity.
pub fn film<E: Elem>(g: &mut Graph<E>, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
    let (vx, vg, vb) = (g.value(x), g.value(gamma), g.value(beta));
    let (rows, d) = vx.dims2();
    assert_eq!(vg.numel(), d, "film gamma width");
    assert_eq!(vb.numel(), d, "film beta width");
    let gam = vg.data();
    let bet = vb.data();
    let mut out = Vec::with_capacity(rows * d);
    for r in 0..rows {
        for c in 0..d {
            out.push((E::ONE + gam[c]) * vx.data()[r * d + c] + bet[c]);
        }
    }
    g.push(Tensor::from_vec(vx.shape().to_vec(), out), vec![x, gamma, beta], Box::new(FilmBack))
}
