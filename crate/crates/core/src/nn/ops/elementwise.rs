//! Pointwise ops and reductions.

use crate::nn::graph::{BackCtx, Backward, Graph, NodeId};
use crate::nn::tensor::{Elem, Tensor};

#[derive(Clone, Copy, Debug)]
pub enum Unary {
    Neg,
    Exp,
    Ln,
    Sqrt,
    Sigmoid,
    Silu,
    /// tanh approximation of GELU.
    Gelu,
    Tanh,
    Softplus,
    Square,
}

impl Unary {
    fn eval<E: Elem>(self, x: E) -> E {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Silu => x * sigmoid(x),
            Unary::Gelu => gelu(x),
            Unary::Tanh => x.tanh(),
            Unary::Softplus => softplus(x),
            Unary::Square => x * x,
        }
    }

    /// dy/dx given input x and output y.
    fn slope<E: Elem>(self, x: E, y: E) -> E {
        match self {
            Unary::Neg => -E::ONE,
            Unary::Exp => y,
            Unary::Ln => E::ONE / x,
            Unary::Sqrt => E::from_f64(0.5) / y,
            Unary::Sigmoid => y * (E::ONE - y),
            Unary::Silu => {
                let s = sigmoid(x);
                s * (E::ONE + x * (E::ONE - s))
            }
            Unary::Gelu => gelu_slope(x),
            Unary::Tanh => E::ONE - y * y,
            Unary::Softplus => sigmoid(x),
            Unary::Square => E::from_f64(2.0) * x,
        }
    }
}

pub fn sigmoid<E: Elem>(x: E) -> E {
    // Split on sign so exp never overflows.
    if x >= E::ZERO {
        E::ONE / (E::ONE + (-x).fast_exp())
    } else {
        let e = x.fast_exp();
        e / (E::ONE + e)
    }
}

pub fn softplus<E: Elem>(x: E) -> E {
    // log(1+e^x), overflow-safe: for large x this is x itself.
    if x.to_f64() > 30.0 {
        x
    } else {
        (E::ONE + x.fast_exp()).ln()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu<E: Elem>(x: E) -> E {
    let c = E::from_f64(GELU_C);
    let a = E::from_f64(GELU_A);
    let inner = c * (x + a * x * x * x);
    E::from_f64(0.5) * x * (E::ONE + inner.tanh())
}

fn gelu_slope<E: Elem>(x: E) -> E {
    let c = E::from_f64(GELU_C);
    let a = E::from_f64(GELU_A);
    let half = E::from_f64(0.5);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let dinner = c * (E::ONE + E::from_f64(3.0) * a * x * x);
    half * (E::ONE + t) + half * x * (E::ONE - t * t) * dinner
}

struct UnaryBack(Unary);

impl<E: Elem> Backward<E> for UnaryBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let x = ctx.parents[0];
        let g = ctx
            .grad
            .data()
            .iter()
            .zip(x.data().iter().zip(ctx.output.data().iter()))
            .map(|(&go, (&xi, &yi))| go * self.0.slope(xi, yi))
            .collect();
        vec![Some(Tensor::from_vec(x.shape().to_vec(), g))]
    }
}

pub fn unary<E: Elem>(g: &mut Graph<E>, op: Unary, x: NodeId) -> NodeId {
    let y = g.value(x).map(|v| op.eval(v));
    g.push(y, vec![x], Box::new(UnaryBack(op)))
}

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

struct BinBack(BinKind);

impl<E: Elem> Backward<E> for BinBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let (a, b) = (ctx.parents[0], ctx.parents[1]);
        let gout = ctx.grad;
        match self.0 {
            BinKind::Add => vec![Some(gout.clone()), Some(gout.clone())],
            BinKind::Sub => vec![Some(gout.clone()), Some(gout.map(|v| -v))],
            BinKind::Mul => vec![
                if ctx.needs[0] { Some(gout.zip_map(b, |g, bv| g * bv)) } else { None },
                if ctx.needs[1] { Some(gout.zip_map(a, |g, av| g * av)) } else { None },
            ],
        }
    }
}

fn binary<E: Elem>(g: &mut Graph<E>, kind: BinKind, a: NodeId, b: NodeId) -> NodeId {
    let (va, vb) = (g.value(a), g.value(b));
    assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
    let y = match kind {
        BinKind::Add => va.zip_map(vb, |x, y| x + y),
        BinKind::Sub => va.zip_map(vb, |x, y| x - y),
        BinKind::Mul => va.zip_map(vb, |x, y| x * y),
    };
    g.push(y, vec![a, b], Box::new(BinBack(kind)))
}

pub fn add<E: Elem>(g: &mut Graph<E>, a: NodeId, b: NodeId) -> NodeId {
    binary(g, BinKind::Add, a, b)
}

pub fn sub<E: Elem>(g: &mut Graph<E>, a: NodeId, b: NodeId) -> NodeId {
    binary(g, BinKind::Sub, a, b)
}

pub fn mul<E: Elem>(g: &mut Graph<E>, a: NodeId, b: NodeId) -> NodeId {
    binary(g, BinKind::Mul, a, b)
}

struct ScaleBack<E: Elem>(E);

impl<E: Elem> Backward<E> for ScaleBack<E> {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let c = self.0;
        vec![Some(ctx.grad.map(|v| v * c))]
    }
}

pub fn scale<E: Elem>(g: &mut Graph<E>, x: NodeId, c: E) -> NodeId {
    let y = g.value(x).map(|v| v * c);
    g.push(y, vec![x], Box::new(ScaleBack(c)))
}

/// y = x * scale + shift with per-column constants (standardize / destandardize).
struct AffineColsBack<E: Elem> {
    scale: Vec<E>,
}

impl<E: Elem> Backward<E> for AffineColsBack<E> {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let (_, cols) = ctx.parents[0].dims2();
        let g = ctx
            .grad
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * self.scale[i % cols])
            .collect();
        vec![Some(Tensor::from_vec(ctx.parents[0].shape().to_vec(), g))]
    }
}

pub fn affine_cols<E: Elem>(g: &mut Graph<E>, x: NodeId, scale: &[E], shift: &[E]) -> NodeId {
    let v = g.value(x);
    let (_, cols) = v.dims2();
    assert_eq!(scale.len(), cols);
    assert_eq!(shift.len(), cols);
    let data = v
        .data()
        .iter()
        .enumerate()
        .map(|(i, &xv)| xv * scale[i % cols] + shift[i % cols])
        .collect();
    let y = Tensor::from_vec(v.shape().to_vec(), data);
    g.push(y, vec![x], Box::new(AffineColsBack { scale: scale.to_vec() }))
}

struct SumAllBack;

impl<E: Elem> Backward<E> for SumAllBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let go = ctx.grad.scalar_value();
        vec![Some(Tensor::full(ctx.parents[0].shape().to_vec(), go))]
    }
}

pub fn sum_all<E: Elem>(g: &mut Graph<E>, x: NodeId) -> NodeId {
    let mut acc = E::ZERO;
    for &v in g.value(x).data() {
        acc += v;
    }
    g.push(Tensor::scalar(acc), vec![x], Box::new(SumAllBack))
}

struct MeanAllBack;

impl<E: Elem> Backward<E> for MeanAllBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let n = E::from_f64(ctx.parents[0].numel() as f64);
        let go = ctx.grad.scalar_value() / n;
        vec![Some(Tensor::full(ctx.parents[0].shape().to_vec(), go))]
    }
}

pub fn mean_all<E: Elem>(g: &mut Graph<E>, x: NodeId) -> NodeId {
    let v = g.value(x);
    let mut acc = E::ZERO;
    for &x in v.data() {
        acc += x;
    }
    let m = acc / E::from_f64(v.numel() as f64);
    g.push(Tensor::scalar(m), vec![x], Box::new(MeanAllBack))
}

/// Fused mean squared error between two same-shape tensors.
struct MseBack;

impl<E: Elem> Backward<E> for MseBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let (a, b) = (ctx.parents[0], ctx.parents[1]);
        let c = ctx.grad.scalar_value() * E::from_f64(2.0 / a.numel() as f64);
        let ga = || a.zip_map(b, |x, y| c * (x - y));
        vec![
            if ctx.needs[0] { Some(ga()) } else { None },
            if ctx.needs[1] { Some(a.zip_map(b, |x, y| -c * (x - y))) } else { None },
        ]
    }
}

pub fn mse<E: Elem>(g: &mut Graph<E>, a: NodeId, b: NodeId) -> NodeId {
    let (va, vb) = (g.value(a), g.value(b));
    assert_eq!(va.shape(), vb.shape(), "mse shape mismatch");
    let mut acc = E::ZERO;
    for (&x, &y) in va.data().iter().zip(vb.data()) {
        let d = x - y;
        acc += d * d;
    }
    let m = acc / E::from_f64(va.numel() as f64);
    g.push(Tensor::scalar(m), vec![a, b], Box::new(MseBack))
}

/// Mean of squares: mean(x^2) over every entry.
struct MeanSqBack;

impl<E: Elem> Backward<E> for MeanSqBack {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let x = ctx.parents[0];
        let c = ctx.grad.scalar_value() * E::from_f64(2.0 / x.numel() as f64);
        vec![Some(x.map(|v| c * v))]
    }
}

pub fn mean_sq<E: Elem>(g: &mut Graph<E>, x: NodeId) -> NodeId {
    let v = g.value(x);
    let mut acc = E::ZERO;
    for &x in v.data() {
        acc += x * x;
    }
    let m = acc / E::from_f64(v.numel() as f64);
    g.push(Tensor::scalar(m), vec![x], Box::new(MeanSqBack))
}

/// Inverted dropout; `mask` entries are 0 or 1/(1-p). Identity when p == 0.
struct DropoutBack<E: Elem> {
    mask: Vec<E>,
}

impl<E: Elem> Backward<E> for DropoutBack<E> {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>> {
        let g = ctx.grad.data().iter().zip(&self.mask).map(|(&go, &m)| go * m).collect();
        vec![Some(Tensor::from_vec(ctx.parents[0].shape().to_vec(), g))]
    }
}

pub fn dropout<E: Elem>(g: &mut Graph<E>, x: NodeId, p: f64, rng: &mut impl rand::Rng) -> NodeId {
    if p <= 0.0 {
        return x;
    }
    let keep = E::from_f64(1.0 / (1.0 - p));
    let v = g.value(x);
    let mask: Vec<E> = (0..v.numel())
        .map(|_| if rng.gen::<f64>() < p { E::ZERO } else { keep })
        .collect();
    let y = Tensor::from_vec(
        v.shape().to_vec(),
        v.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect(),
    );
    g.push(y, vec![x], Box::new(DropoutBack { mask }))
}
