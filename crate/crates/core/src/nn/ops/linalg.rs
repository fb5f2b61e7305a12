//! Matrix product, row broadcasts, and shape surgery ops.

use crate::nn::graph::{BackCtx, Backward, Graph, NodeId};
use crate::nn::tensor::{matmul_raw, transpose_raw, Elem, Tensor};

struct MatmulBack;

impl<E: Elem> Backward<E> for MatmulBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let (a, b) = (ctx.parents[0], ctx.parents[1]);
        let (m, k) = a.dims2();
        let (_, n) = b.dims2();
        let gout = ctx.grad.data();
        let ga = if ctx.needs[0] {
            // gA = gY * B^T
            let bt = transpose_raw(b.data(), k, n);
            Some(Tensor::from_vec(a.shape().to_vec(), matmul_raw(gout, &bt, m, n, k)))
        } else {
            None
        };
        let gb = if ctx.needs[1] {
            // gB = A^T * gY
            let at = transpose_raw(a.data(), m, k);
            Some(Tensor::from_vec(b.shape().to_vec(), matmul_raw(&at, gout, k, m, n)))
        } else {
            None
        };
        vec![ga, gb]
    }
}

/// y = a (rows x k) * b (k x n). Leading axes of `a` collapse into rows.
pub fn matmul<E: Elem>(g: &mut Graph<E>, a: NodeId, b: NodeId) -> NodeId {
    let (va, vb) = (g.value(a), g.value(b));
    let (m, k) = va.dims2();
    let (kb, n) = vb.dims2();
    assert_eq!(k, kb, "matmul inner dims {k} vs {kb}");
    let y = matmul_raw(va.data(), vb.data(), m, k, n);
    let mut shape: Vec<usize> = va.shape().to_vec();
    if shape.is_empty() {
        shape = vec![n];
    } else {
        *shape.last_mut().unwrap() = n;
    }
    g.push(Tensor::from_vec(shape, y), vec![a, b], Box::new(MatmulBack))
}

struct AddRowBack;

impl<E: Elem> Backward<E> for AddRowBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let row = ctx.parents[1];
        let d = row.numel();
        let gx = if ctx.needs[0] { Some(ctx.grad.clone()) } else { None };
        let grow = if ctx.needs[1] {
            let mut acc = vec![E::ZERO; d];
            for chunk in ctx.grad.data().chunks_exact(d) {
                for (a, &g) in acc.iter_mut().zip(chunk) {
                    *a += g;
                }
            }
            Some(Tensor::from_vec(row.shape().to_vec(), acc))
        } else {
            None
        };
        vec![gx, grow]
    }
}

/// y[t] = x[t] + row, broadcasting a length-d vector over rows.
pub fn add_row<E: Elem>(g: &mut Graph<E>, x: NodeId, row: NodeId) -> NodeId {
    let (vx, vrow) = (g.value(x), g.value(row));
    let (_, d) = vx.dims2();
    assert_eq!(vrow.numel(), d, "row broadcast width mismatch");
    let rd = vrow.data();
    let data = vx
        .data()
        .chunks_exact(d)
        .flat_map(|chunk| chunk.iter().zip(rd).map(|(&a, &b)| a + b))
        .collect();
    let y = Tensor::from_vec(vx.shape().to_vec(), data);
    g.push(y, vec![x, row], Box::new(AddRowBack))
}

/// x (rows x d_in) * w (d_in x d_out) + b.
pub fn linear<E: Elem>(g: &mut Graph<E>, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
    let y = matmul(g, x, w);
    add_row(g, y, b)
}

struct BroadcastRowBack;

impl<E: Elem> Backward<E> for BroadcastRowBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let row = ctx.parents[0];
        let d = row.numel();
        let mut acc = vec![E::ZERO; d];
        for chunk in ctx.grad.data().chunks_exact(d) {
            for (a, &g) in acc.iter_mut().zip(chunk) {
                *a += g;
            }
        }
        vec![Some(Tensor::from_vec(row.shape().to_vec(), acc))]
    }
}

/// Tile a length-d row vector to (t_rows x d).
pub fn broadcast_row<E: Elem>(g: &mut Graph<E>, row: NodeId, t_rows: usize) -> NodeId {
    let vrow = g.value(row);
    let d = vrow.numel();
    let mut data = Vec::with_capacity(t_rows * d);
    for _ in 0..t_rows {
        data.extend_from_slice(vrow.data());
    }
    g.push(Tensor::from_vec(vec![t_rows, d], data), vec![row], Box::new(BroadcastRowBack))
}

struct SliceColsBack {
    start: usize,
    len: usize,
}

impl<E: Elem> Backward<E> for SliceColsBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let x = ctx.parents[0];
        let (rows, cols) = x.dims2();
        let mut gx = vec![E::ZERO; rows * cols];
        for (r, chunk) in ctx.grad.data().chunks_exact(self.len).enumerate().take(rows) {
            gx[r * cols + self.start..r * cols + self.start + self.len].copy_from_slice(chunk);
        }
        vec![Some(Tensor::from_vec(x.shape().to_vec(), gx))]
    }
}

/// Contiguous column slice [start, start+len).
pub fn slice_cols<E: Elem>(g: &mut Graph<E>, x: NodeId, start: usize, len: usize) -> NodeId {
    let v = g.value(x);
    let (rows, cols) = v.dims2();
    assert!(start + len <= cols, "slice_cols out of range");
    let mut data = Vec::with_capacity(rows * len);
    for r in 0..rows {
        data.extend_from_slice(&v.data()[r * cols + start..r * cols + start + len]);
    }
    g.push(Tensor::from_vec(vec![rows, len], data), vec![x], Box::new(SliceColsBack { start, len }))
}

struct SliceRowsBack {
    start: usize,
}

impl<E: Elem> Backward<E> for SliceRowsBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let x = ctx.parents[0];
        let (rows, cols) = x.dims2();
        let len = ctx.grad.numel() / cols;
        let mut gx = vec![E::ZERO; rows * cols];
        gx[self.start * cols..(self.start + len) * cols].copy_from_slice(ctx.grad.data());
        vec![Some(Tensor::from_vec(x.shape().to_vec(), gx))]
    }
}

/// Contiguous row slice [start, start+len).
pub fn slice_rows<E: Elem>(g: &mut Graph<E>, x: NodeId, start: usize, len: usize) -> NodeId {
    let v = g.value(x);
    let (rows, cols) = v.dims2();
    assert!(start + len <= rows, "slice_rows out of range");
    let data = v.data()[start * cols..(start + len) * cols].to_vec();
    g.push(Tensor::from_vec(vec![len, cols], data), vec![x], Box::new(SliceRowsBack { start }))
}

struct GatherColsBack {
    idx: Vec<usize>,
}

impl<E: Elem> Backward<E> for GatherColsBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let x = ctx.parents[0];
        let (rows, cols) = x.dims2();
        let k = self.idx.len();
        let mut gx = vec![E::ZERO; rows * cols];
        for r in 0..rows {
            for (j, &c) in self.idx.iter().enumerate() {
                gx[r * cols + c] += ctx.grad.data()[r * k + j];
            }
        }
        vec![Some(Tensor::from_vec(x.shape().to_vec(), gx))]
    }
}

/// Arbitrary column gather (possibly non-contiguous joint channels).
pub fn gather_cols<E: Elem>(g: &mut Graph<E>, x: NodeId, idx: &[usize]) -> NodeId {
    let v = g.value(x);
    let (rows, cols) = v.dims2();
    assert!(idx.iter().all(|&c| c < cols), "gather_cols index out of range");
    let mut data = Vec::with_capacity(rows * idx.len());
    for r in 0..rows {
        for &c in idx {
            data.push(v.data()[r * cols + c]);
        }
    }
    g.push(
        Tensor::from_vec(vec![rows, idx.len()], data),
        vec![x],
        Box::new(GatherColsBack { idx: idx.to_vec() }),
    )
}

struct ConcatColsBack {
    widths: Vec<usize>,
}

impl<E: Elem> Backward<E> for ConcatColsBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let total: usize = self.widths.iter().sum();
        let rows = ctx.grad.numel() / total;
        let mut out = Vec::with_capacity(self.widths.len());
        let mut start = 0;
        for (i, &w) in self.widths.iter().enumerate() {
            if ctx.needs[i] {
                let mut gp = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    gp.extend_from_slice(&ctx.grad.data()[r * total + start..r * total + start + w]);
                }
                out.push(Some(Tensor::from_vec(ctx.parents[i].shape().to_vec(), gp)));
            } else {
                out.push(None);
            }
            start += w;
        }
        out
    }
}

/// Concatenate along the last axis; all inputs share the row count.
pub fn concat_cols<E: Elem>(g: &mut Graph<E>, xs: &[NodeId]) -> NodeId {
    assert!(!xs.is_empty());
    let rows = g.value(xs[0]).dims2().0;
    let widths: Vec<usize> = xs.iter().map(|&x| g.value(x).dims2().1).collect();
    for &x in xs {
        assert_eq!(g.value(x).dims2().0, rows, "concat_cols row mismatch");
    }
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (&x, &w) in xs.iter().zip(&widths) {
            let v = g.value(x);
            data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
        }
    }
    g.push(Tensor::from_vec(vec![rows, total], data), xs.to_vec(), Box::new(ConcatColsBack { widths }))
}

struct ReverseRowsBack;

impl<E: Elem> Backward<E> for ReverseRowsBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let (rows, cols) = ctx.parents[0].dims2();
        vec![Some(reverse_rows_raw(ctx.grad, rows, cols))]
    }
}

fn reverse_rows_raw<E: Elem>(t: &Tensor<E>, rows: usize, cols: usize) -> Tensor<E> {
    let mut data = Vec::with_capacity(rows * cols);
    for r in (0..rows).rev() {
        data.extend_from_slice(&t.data()[r * cols..(r + 1) * cols]);
    }
    Tensor::from_vec(t.shape().to_vec(), data)
}

/// Reverse along the time (row) axis.
pub fn reverse_rows<E: Elem>(g: &mut Graph<E>, x: NodeId) -> NodeId {
    let v = g.value(x);
    let (rows, cols) = v.dims2();
    let y = reverse_rows_raw(v, rows, cols);
    g.push(y, vec![x], Box::new(ReverseRowsBack))
}

struct RepeatColsBack {
    times: usize,
}

impl<E: Elem> Backward<E> for RepeatColsBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let x = ctx.parents[0];
        let (rows, cols) = x.dims2();
        let mut gx = vec![E::ZERO; rows * cols];
        let gw = cols * self.times;
        for r in 0..rows {
            for c in 0..cols {
                for i in 0..self.times {
                    gx[r * cols + c] += ctx.grad.data()[r * gw + c * self.times + i];
                }
            }
        }
        vec![Some(Tensor::from_vec(x.shape().to_vec(), gx))]
    }
}

/// Repeat every column `times` consecutive times: (rows x c) -> (rows x c*times).
pub fn repeat_cols<E: Elem>(g: &mut Graph<E>, x: NodeId, times: usize) -> NodeId {
    let v = g.value(x);
    let (rows, cols) = v.dims2();
    let mut data = Vec::with_capacity(rows * cols * times);
    for r in 0..rows {
        for c in 0..cols {
            let val = v.data()[r * cols + c];
            for _ in 0..times {
                data.push(val);
            }
        }
    }
    g.push(Tensor::from_vec(vec![rows, cols * times], data), vec![x], Box::new(RepeatColsBack { times }))
}
