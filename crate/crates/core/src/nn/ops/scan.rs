//! Input-dependent state-space discretization and the sequential selective
//! scan, with hand-written reverse rules.
//!
//! Shapes: delta [T,dc], a [dc,N], b [T,N], u [T,dc], c [T,N], d_skip [dc];
//! the discretized tables are [T,dc,N].

use crate::nn::graph::{BackCtx, Backward, Graph, NodeId};
use crate::nn::tensor::{Elem, Tensor};

/// phi1(z) = (e^z - 1)/z, series near zero to dodge cancellation.
fn phi1<E: Elem>(z: E) -> E {
    if z.abs().to_f64() < 1e-3 {
        let half = E::from_f64(0.5);
        let sixth = E::from_f64(1.0 / 6.0);
        E::ONE + z * (half + z * sixth)
    } else {
        (z.exp() - E::ONE) / z
    }
}

/// phi1'(z) = (e^z (z - 1) + 1)/z^2, series near zero.
fn phi1_prime<E: Elem>(z: E) -> E {
    if z.abs().to_f64() < 1e-3 {
        let third = E::from_f64(1.0 / 3.0);
        let eighth = E::from_f64(1.0 / 8.0);
        E::from_f64(0.5) + z * (third + z * eighth)
    } else {
        (z.exp() * (z - E::ONE) + E::ONE) / (z * z)
    }
}

struct DiscretizeABack;

impl<E: Elem> Backward<E> for DiscretizeABack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let (delta, a) = (ctx.parents[0], ctx.parents[1]);
        let (t, dc) = delta.dims2();
        let n = a.dims2().1;
        let abar = ctx.output.data();
        let g = ctx.grad.data();
        let mut gdelta = vec![E::ZERO; t * dc];
        let mut ga = vec![E::ZERO; dc * n];
        for tt in 0..t {
            for c in 0..dc {
                let base = (tt * dc + c) * n;
                let dv = delta.data()[tt * dc + c];
                let mut acc = E::ZERO;
                for i in 0..n {
                    let gi = g[base + i] * abar[base + i];
                    acc += gi * a.data()[c * n + i];
                    ga[c * n + i] += gi * dv;
                }
                gdelta[tt * dc + c] = acc;
            }
        }
        vec![
            if ctx.needs[0] { Some(Tensor::from_vec(delta.shape().to_vec(), gdelta)) } else { None },
            if ctx.needs[1] { Some(Tensor::from_vec(a.shape().to_vec(), ga)) } else { None },
        ]
    }
}

/// abar[t,c,n] = exp(delta[t,c] * a[c,n]).
pub fn discretize_a<E: Elem>(g: &mut Graph<E>, delta: NodeId, a: NodeId) -> NodeId {
    let (vd, va) = (g.value(delta), g.value(a));
    let (t, dc) = vd.dims2();
    let (dca, n) = va.dims2();
    assert_eq!(dc, dca, "discretize channel mismatch");
    let mut out = Vec::with_capacity(t * dc * n);
    for tt in 0..t {
        for c in 0..dc {
            let dv = vd.data()[tt * dc + c];
            for i in 0..n {
                out.push((dv * va.data()[c * n + i]).fast_exp());
            }
        }
    }
    g.push(Tensor::from_vec(vec![t, dc, n], out), vec![delta, a], Box::new(DiscretizeABack))
}

/// Below this |delta * a| the closed form loses precision and the series
/// takes over.
const SERIES_GUARD: f64 = 1e-3;

struct DiscretizeBBack;

impl<E: Elem> Backward<E> for DiscretizeBBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let (delta, a, b, abar) = (ctx.parents[0], ctx.parents[1], ctx.parents[2], ctx.parents[3]);
        let (t, dc) = delta.dims2();
        let n = a.dims2().1;
        let g = ctx.grad.data();
        let abar_d = abar.data();
        let mut gdelta = vec![E::ZERO; t * dc];
        let mut ga = vec![E::ZERO; dc * n];
        let mut gb = vec![E::ZERO; t * n];
        let mut gabar = vec![E::ZERO; t * dc * n];
        for tt in 0..t {
            for c in 0..dc {
                let base = (tt * dc + c) * n;
                let dv = delta.data()[tt * dc + c];
                let mut gd_acc = E::ZERO;
                for i in 0..n {
                    let go = g[base + i];
                    let av = a.data()[c * n + i];
                    let bv = b.data()[tt * n + i];
                    let z = dv * av;
                    if z.abs().to_f64() < SERIES_GUARD {
                        // Series branch: bbar = dv * bv * s(z), s = 1 + z/2 + z^2/6.
                        let s = E::ONE + z * (E::from_f64(0.5) + z * E::from_f64(1.0 / 6.0));
                        let sp = E::from_f64(0.5) + z * E::from_f64(1.0 / 3.0);
                        gd_acc += go * bv * (s + z * sp);
                        ga[c * n + i] += go * bv * dv * dv * sp;
                        gb[tt * n + i] += go * dv * s;
                    } else {
                        // Closed form reuses abar = exp(z): bbar = (abar-1) b / a.
                        let ab = abar_d[base + i];
                        ga[c * n + i] += -go * (ab - E::ONE) * bv / (av * av);
                        gb[tt * n + i] += go * (ab - E::ONE) / av;
                        gabar[base + i] = go * bv / av;
                    }
                }
                gdelta[tt * dc + c] = gd_acc;
            }
        }
        vec![
            if ctx.needs[0] { Some(Tensor::from_vec(delta.shape().to_vec(), gdelta)) } else { None },
            if ctx.needs[1] { Some(Tensor::from_vec(a.shape().to_vec(), ga)) } else { None },
            if ctx.needs[2] { Some(Tensor::from_vec(b.shape().to_vec(), gb)) } else { None },
            if ctx.needs[3] { Some(Tensor::from_vec(abar.shape().to_vec(), gabar)) } else { None },
        ]
    }
}

/// bbar[t,c,n] = ((exp(delta*a) - 1)/a) * b[t,n], a series near zero. The
/// exponential is not recomputed: it arrives as `abar` from `discretize_a`
/// (delta-gradient flows through that input in the closed-form branch).
pub fn discretize_b<E: Elem>(g: &mut Graph<E>, delta: NodeId, a: NodeId, b: NodeId, abar: NodeId) -> NodeId {
    let (vd, va, vb, vab) = (g.value(delta), g.value(a), g.value(b), g.value(abar));
    let (t, dc) = vd.dims2();
    let (dca, n) = va.dims2();
    assert_eq!(dc, dca, "discretize channel mismatch");
    assert_eq!(vb.dims2(), (t, n), "discretize b shape mismatch");
    assert_eq!(vab.numel(), t * dc * n, "discretize abar shape mismatch");
    let abar_d = vab.data();
    let mut out = Vec::with_capacity(t * dc * n);
    for tt in 0..t {
        for c in 0..dc {
            let dv = vd.data()[tt * dc + c];
            let base = (tt * dc + c) * n;
            for i in 0..n {
                let z = dv * va.data()[c * n + i];
                let bv = vb.data()[tt * n + i];
                if z.abs().to_f64() < SERIES_GUARD {
                    out.push(phi1(z) * dv * bv);
                } else {
                    out.push((abar_d[base + i] - E::ONE) * bv / va.data()[c * n + i]);
                }
            }
        }
    }
    g.push(Tensor::from_vec(vec![t, dc, n], out), vec![delta, a, b, abar], Box::new(DiscretizeBBack))
}

struct ScanBack<E: Elem> {
    /// Full hidden-state history [T, dc, N], stored by the tracked forward.
    h_hist: Vec<E>,
}

impl<E: Elem> Backward<E> for ScanBack<E> {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let (u, abar, bbar, cseq, dskip) =
            (ctx.parents[0], ctx.parents[1], ctx.parents[2], ctx.parents[3], ctx.parents[4]);
        let (t, dc) = u.dims2();
        let n = cseq.dims2().1;
        let gy = ctx.grad.data();
        let ud = u.data();
        let ad = abar.data();
        let bd = bbar.data();
        let cd = cseq.data();
        let dd = dskip.data();
        let h = &self.h_hist;

        let mut gu = vec![E::ZERO; t * dc];
        let mut gabar = vec![E::ZERO; t * dc * n];
        let mut gbbar = vec![E::ZERO; t * dc * n];
        let mut gc = vec![E::ZERO; t * n];
        let mut gd = vec![E::ZERO; dc];
        // carry[c,n] = abar[t+1,c,n] * lambda[t+1,c,n]
        let mut carry = vec![E::ZERO; dc * n];

        for tt in (0..t).rev() {
            for c in 0..dc {
                let go = gy[tt * dc + c];
                let base = (tt * dc + c) * n;
                let mut gu_acc = dd[c] * go;
                for i in 0..n {
                    let lam = go * cd[tt * n + i] + carry[c * n + i];
                    let h_prev = if tt == 0 { E::ZERO } else { h[((tt - 1) * dc + c) * n + i] };
                    gabar[base + i] = lam * h_prev;
                    gbbar[base + i] = lam * ud[tt * dc + c];
                    gu_acc += lam * bd[base + i];
                    gc[tt * n + i] += go * h[base + i];
                    carry[c * n + i] = ad[base + i] * lam;
                }
                gu[tt * dc + c] = gu_acc;
                gd[c] += go * ud[tt * dc + c];
            }
        }
        vec![
            if ctx.needs[0] { Some(Tensor::from_vec(u.shape().to_vec(), gu)) } else { None },
            if ctx.needs[1] { Some(Tensor::from_vec(abar.shape().to_vec(), gabar)) } else { None },
            if ctx.needs[2] { Some(Tensor::from_vec(bbar.shape().to_vec(), gbbar)) } else { None },
            if ctx.needs[3] { Some(Tensor::from_vec(cseq.shape().to_vec(), gc)) } else { None },
            if ctx.needs[4] { Some(Tensor::from_vec(dskip.shape().to_vec(), gd)) } else { None },
        ]
    }
}

/// Inference fast path: discretization fused into the recurrence, no
/// [T,dc,N] table materialization. Identical math to
/// `discretize_a`/`discretize_b` + `selective_scan` (pinned by tests);
/// forward-only, so callers use it when the graph is not tracking.
pub fn fused_scan_forward<E: Elem>(
    u: &Tensor<E>,
    delta: &Tensor<E>,
    a: &Tensor<E>,
    bmat: &Tensor<E>,
    cmat: &Tensor<E>,
    d_skip: &Tensor<E>,
) -> Tensor<E> {
    let (t, dc) = u.dims2();
    let (_, n) = a.dims2();
    let ud = u.data();
    let dd = delta.data();
    let ad = a.data();
    let bd = bmat.data();
    let cd = cmat.data();
    let sd = d_skip.data();
    let mut y = vec![E::ZERO; t * dc];
    // The recurrence is sequential in time but independent across channels;
    // split channels over threads when the sequence is long (column-strided
    // writes into disjoint entries, bit-identical under any schedule).
    let chan_job = |c0: usize, channels: usize, y: &mut [E], write_stride: usize| {
        let mut h = vec![E::ZERO; channels * n];
        for tt in 0..t {
            let brow = &bd[tt * n..(tt + 1) * n];
            let crow = &cd[tt * n..(tt + 1) * n];
            for (ci, hrow) in h.chunks_exact_mut(n).enumerate() {
                let c = c0 + ci;
                let uv = ud[tt * dc + c];
                let dv = dd[tt * dc + c];
                let arow = &ad[c * n..(c + 1) * n];
                let mut acc = E::ZERO;
                for i in 0..n {
                    let z = dv * arow[i];
                    let abar = z.fast_exp();
                    let bbar = if z.abs().to_f64() < SERIES_GUARD {
                        phi1(z) * dv * brow[i]
                    } else {
                        (abar - E::ONE) * brow[i] / arow[i]
                    };
                    let hn = abar * hrow[i] + bbar * uv;
                    hrow[i] = hn;
                    acc += crow[i] * hn;
                }
                y[tt * write_stride + ci] = acc + sd[c] * uv;
            }
        }
    };
    if t * dc * n >= 1 << 20 && dc >= 2 {
        let half = dc / 2;
        let (left, right): (Vec<E>, Vec<E>) = rayon::join(
            || {
                let mut buf = vec![E::ZERO; t * half];
                chan_job(0, half, &mut buf, half);
                buf
            },
            || {
                let mut buf = vec![E::ZERO; t * (dc - half)];
                chan_job(half, dc - half, &mut buf, dc - half);
                buf
            },
        );
        for tt in 0..t {
            y[tt * dc..tt * dc + half].copy_from_slice(&left[tt * half..(tt + 1) * half]);
            y[tt * dc + half..(tt + 1) * dc]
                .copy_from_slice(&right[tt * (dc - half)..(tt + 1) * (dc - half)]);
        }
    } else {
        chan_job(0, dc, &mut y, dc);
    }
    Tensor::from_vec(vec![t, dc], y)
}

/// Sequential selective scan:
///   h[t] = abar[t] .* h[t-1] + bbar[t] * u[t],  y[t,c] = sum_n c[t,n] h[t,c,n] + d[c] u[t,c]
/// h starts at zero; strictly causal.
pub fn selective_scan<E: Elem>(
    g: &mut Graph<E>,
    u: NodeId,
    abar: NodeId,
    bbar: NodeId,
    cseq: NodeId,
    d_skip: NodeId,
) -> NodeId {
    let (vu, va, vb, vc, vd) = (g.value(u), g.value(abar), g.value(bbar), g.value(cseq), g.value(d_skip));
    let (t, dc) = vu.dims2();
    let (tn, n) = vc.dims2();
    assert_eq!(t, tn, "scan c length mismatch");
    assert_eq!(va.numel(), t * dc * n, "scan abar shape mismatch");
    assert_eq!(vb.numel(), t * dc * n, "scan bbar shape mismatch");
    assert_eq!(vd.numel(), dc, "scan d_skip width mismatch");
    let track = g.track();

    let ud = vu.data();
    let ad = va.data();
    let bd = vb.data();
    let cd = vc.data();
    let dd = vd.data();

    let mut y = vec![E::ZERO; t * dc];
    let mut h = vec![E::ZERO; dc * n];
    let mut h_hist = if track { Vec::with_capacity(t * dc * n) } else { Vec::new() };
    for tt in 0..t {
        for c in 0..dc {
            let uv = ud[tt * dc + c];
            let base = (tt * dc + c) * n;
            let hrow = &mut h[c * n..(c + 1) * n];
            let mut acc = E::ZERO;
            for i in 0..n {
                let hn = ad[base + i] * hrow[i] + bd[base + i] * uv;
                hrow[i] = hn;
                acc += cd[tt * n + i] * hn;
            }
            y[tt * dc + c] = acc + dd[c] * uv;
        }
        if track {
            h_hist.extend_from_slice(&h);
        }
    }
    g.push(
        Tensor::from_vec(vec![t, dc], y),
        vec![u, abar, bbar, cseq, d_skip],
        Box::new(ScanBack { h_hist }),
    )
}
