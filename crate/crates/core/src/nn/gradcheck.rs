//! Finite-difference validation of the reverse-mode machinery (f64 only).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::params::ParamSet;
use crate::nn::tensor::Tensor;

/// One sampled scalar entry of a named parameter.
pub type Probe = (String, usize);

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_probe: Option<Probe>,
    pub probes: usize,
}

/// Compare analytic gradients against central differences on sampled entries.
///
/// `value_fn` evaluates the scalar objective for perturbed parameters;
/// `analytic` holds the reverse-mode gradients at `params`. Relative error is
/// |g_a - g_n| / max(1, |g_a|, |g_n|), maximized over probes.
pub fn grad_check<F>(
    value_fn: F,
    params: &ParamSet<f64>,
    analytic: &BTreeMap<String, Tensor<f64>>,
    probes: &[Probe],
    eps: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet<f64>) -> Result<f64>,
{
    let mut max_rel = 0.0f64;
    let mut worst = None;
    for (name, idx) in probes {
        let base = params.get(name)?;
        assert!(*idx < base.numel(), "probe index out of range for {name}");
        let ga = analytic
            .get(name)
            .map(|t| t.data()[*idx])
            .ok_or_else(|| Error::ConfigError(format!("no analytic gradient for {name}")))?;

        let mut plus = params.clone();
        let mut t = base.clone();
        t.data_mut()[*idx] += eps;
        plus.set(name, t);
        let f_plus = value_fn(&plus)?;

        let mut minus = params.clone();
        let mut t = base.clone();
        t.data_mut()[*idx] -= eps;
        minus.set(name, t);
        let f_minus = value_fn(&minus)?;

        if !f_plus.is_finite() || !f_minus.is_finite() {
            return Err(Error::NumericalError(format!("non-finite objective while probing {name}[{idx}]")));
        }
        let gn = (f_plus - f_minus) / (2.0 * eps);
        let rel = (ga - gn).abs() / 1.0f64.max(ga.abs()).max(gn.abs());
        if rel > max_rel {
            max_rel = rel;
            worst = Some((name.clone(), *idx));
        }
    }
    Ok(GradCheckReport { max_rel_err: max_rel, worst_probe: worst, probes: probes.len() })
}

/// Sample up to `count` probes spread across all parameters.
pub fn sample_probes(params: &ParamSet<f64>, count: usize, rng: &mut impl Rng) -> Vec<Probe> {
    let mut all: Vec<Probe> = Vec::new();
    for (name, t) in params.iter() {
        // Always probe something from every tensor; add extras for large ones.
        let extra = (t.numel() / 16).min(4);
        for _ in 0..=extra {
            all.push((name.clone(), rng.gen_range(0..t.numel())));
        }
    }
    all.shuffle(rng);
    all.truncate(count.max(params.len()));
    all
}

/// Run `grad_check` on a graph-building closure: reverse-mode gradients of
/// the scalar it returns versus central differences over every parameter
/// entry (or `max_probes` sampled ones).
pub fn check_graph_fn<B>(
    params: &ParamSet<f64>,
    build: B,
    eps: f64,
    max_probes: usize,
    rng: &mut impl Rng,
) -> Result<GradCheckReport>
where
    B: Fn(&mut crate::nn::graph::Graph<f64>, &crate::nn::params::BoundParams) -> crate::nn::graph::NodeId,
{
    use crate::nn::graph::Graph;
    use crate::nn::params::BoundParams;

    // Analytic gradients at the base point.
    let mut g = Graph::new(true);
    let bound = BoundParams::bind(&mut g, params);
    let root = build(&mut g, &bound);
    if !g.value(root).is_scalar() {
        return Err(Error::ShapeError("grad check objective must be scalar".into()));
    }
    let base = g.value(root).scalar_value();
    if !base.is_finite() {
        return Err(Error::NumericalError("non-finite objective at base point".into()));
    }
    let grads = g.backward(root);
    let mut analytic = BTreeMap::new();
    for (name, t) in params.iter() {
        analytic.insert(name.clone(), grads.get(bound.id(name), t));
    }
    drop(g);

    let total: usize = params.iter().map(|(_, t)| t.numel()).sum();
    let probes: Vec<Probe> = if total <= max_probes {
        params
            .iter()
            .flat_map(|(n, t)| (0..t.numel()).map(move |i| (n.clone(), i)))
            .collect()
    } else {
        sample_probes(params, max_probes, rng)
    };

    let value_fn = |p: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new(false);
        let bound = BoundParams::bind(&mut g, p);
        let root = build(&mut g, &bound);
        let v = g.value(root).scalar_value();
        if !v.is_finite() {
            return Err(Error::NumericalError("non-finite objective".into()));
        }
        Ok(v)
    };
    grad_check(value_fn, params, &analytic, &probes, eps)
}

/// The standard per-layer battery: every op in the catalog wired into a tiny
/// scalar objective and finite-difference-checked in f64. Returns the worst
/// report over all cases. The full-denoiser check lives in `denoiser`.
pub fn check_layer_suite() -> Result<GradCheckReport> {
    use crate::nn::graph::{Graph, NodeId};
    use crate::nn::ops::{self, Unary};
    use crate::nn::params::BoundParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst =
        GradCheckReport { max_rel_err: 0.0, worst_probe: None, probes: 0 };

    let mut run = |name: &str,
                   params: ParamSet<f64>,
                   build: &dyn Fn(&mut Graph<f64>, &BoundParams) -> NodeId,
                   rng: &mut ChaCha8Rng|
     -> Result<()> {
        let rep = check_graph_fn(&params, build, 1e-4, 400, rng)?;
        if rep.max_rel_err > worst.max_rel_err {
            worst = GradCheckReport {
                worst_probe: rep.worst_probe.map(|(p, i)| (format!("{name}/{p}"), i)),
                ..rep
            };
        }
        Ok(())
    };

    let rt = |rng: &mut ChaCha8Rng, shape: Vec<usize>| -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };

    // Linear + MSE against a fixed target.
    {
        let mut p = ParamSet::new();
        p.insert("x", rt(&mut rng, vec![3, 4]));
        p.insert("w", rt(&mut rng, vec![4, 5]));
        p.insert("b", rt(&mut rng, vec![5]));
        let target = rt(&mut rng, vec![3, 5]);
        run(
            "linear",
            p,
            &move |g, b| {
                let y = ops::linear(g, b.id("x"), b.id("w"), b.id("b"));
                let t = g.constant(target.clone());
                ops::mse(g, y, t)
            },
            &mut rng,
        )?;
    }

    // Pointwise nonlinearities through a mean reduction.
    for (label, kind, positive) in [
        ("exp", Unary::Exp, false),
        ("ln", Unary::Ln, true),
        ("sqrt", Unary::Sqrt, true),
        ("sigmoid", Unary::Sigmoid, false),
        ("silu", Unary::Silu, false),
        ("gelu", Unary::Gelu, false),
        ("tanh", Unary::Tanh, false),
        ("softplus", Unary::Softplus, false),
        ("square", Unary::Square, false),
        ("neg", Unary::Neg, false),
    ] {
        let mut p = ParamSet::new();
        let mut x = rt(&mut rng, vec![4, 3]);
        if positive {
            for v in x.data_mut() {
                *v = v.abs() + 0.5;
            }
        }
        p.insert("x", x);
        run(
            label,
            p,
            &move |g, b| {
                let y = ops::unary(g, kind, b.id("x"));
                let y = ops::unary(g, Unary::Square, y);
                ops::mean_all(g, y)
            },
            &mut rng,
        )?;
    }

    // Elementwise binary ops and scaling.
    {
        let mut p = ParamSet::new();
        p.insert("a", rt(&mut rng, vec![3, 3]));
        p.insert("b", rt(&mut rng, vec![3, 3]));
        run(
            "binary",
            p,
            &|g, b| {
                let s = ops::add(g, b.id("a"), b.id("b"));
                let d = ops::sub(g, b.id("a"), b.id("b"));
                let m = ops::mul(g, s, d);
                let m = ops::scale(g, m, 0.75);
                ops::mean_sq(g, m)
            },
            &mut rng,
        )?;
    }

    // Column affine (standardization) + reductions.
    {
        let mut p = ParamSet::new();
        p.insert("x", rt(&mut rng, vec![4, 3]));
        run(
            "affine_cols",
            p,
            &|g, b| {
                let y = ops::affine_cols(g, b.id("x"), &[2.0, 0.5, -1.5], &[0.1, -0.2, 0.3]);
                let s = ops::sum_all(g, y);
                let s2 = ops::unary(g, Unary::Square, s);
                ops::scale(g, s2, 0.01)
            },
            &mut rng,
        )?;
    }

    // Shape surgery chain: slice/gather/concat/repeat/reverse/broadcast.
    {
        let mut p = ParamSet::new();
        p.insert("x", rt(&mut rng, vec![4, 6]));
        p.insert("row", rt(&mut rng, vec![1, 2]));
        run(
            "shape_ops",
            p,
            &|g, b| {
                let a = ops::slice_cols(g, b.id("x"), 1, 3);
                let c = ops::gather_cols(g, b.id("x"), &[5, 0, 2]);
                let r = ops::reverse_rows(g, c);
                let cat = ops::concat_cols(g, &[a, r]); // 4x6
                let rep = ops::repeat_cols(g, b.id("row"), 3); // 1x6
                let rep = ops::broadcast_row(g, rep, 4); // 4x6
                let all = ops::mul(g, cat, rep);
                ops::mean_sq(g, all)
            },
            &mut rng,
        )?;
    }

    // Layer norm.
    {
        let mut p = ParamSet::new();
        p.insert("x", rt(&mut rng, vec![5, 6]));
        p.insert("gamma", rt(&mut rng, vec![6]));
        p.insert("beta", rt(&mut rng, vec![6]));
        let target = rt(&mut rng, vec![5, 6]);
        run(
            "layer_norm",
            p,
            &move |g, b| {
                let y = ops::layer_norm(g, b.id("x"), b.id("gamma"), b.id("beta"), 1e-5);
                let t = g.constant(target.clone());
                ops::mse(g, y, t)
            },
            &mut rng,
        )?;
    }

    // Multi-head attention (projection-free core op).
    {
        let mut p = ParamSet::new();
        p.insert("q", rt(&mut rng, vec![5, 8]));
        p.insert("k", rt(&mut rng, vec![7, 8]));
        p.insert("v", rt(&mut rng, vec![7, 8]));
        let target = rt(&mut rng, vec![5, 8]);
        run(
            "attention",
            p,
            &move |g, b| {
                let y = ops::attention(g, b.id("q"), b.id("k"), b.id("v"), 2, 0.0, None);
                let t = g.constant(target.clone());
                ops::mse(g, y, t)
            },
            &mut rng,
        )?;
    }

    // Depthwise causal conv.
    {
        let mut p = ParamSet::new();
        p.insert("x", rt(&mut rng, vec![6, 3]));
        p.insert("ker", rt(&mut rng, vec![4, 3]));
        p.insert("bias", rt(&mut rng, vec![3]));
        let target = rt(&mut rng, vec![6, 3]);
        run(
            "conv1d_causal",
            p,
            &move |g, b| {
                let y = ops::conv1d_causal(g, b.id("x"), b.id("ker"), b.id("bias"));
                let t = g.constant(target.clone());
                ops::mse(g, y, t)
            },
            &mut rng,
        )?;
    }

    // FiLM.
    {
        let mut p = ParamSet::new();
        p.insert("x", rt(&mut rng, vec![4, 6]));
        p.insert("gamma", rt(&mut rng, vec![1, 6]));
        p.insert("beta", rt(&mut rng, vec![1, 6]));
        let target = rt(&mut rng, vec![4, 6]);
        run(
            "film",
            p,
            &move |g, b| {
                let y = ops::film(g, b.id("x"), b.id("gamma"), b.id("beta"));
                let t = g.constant(target.clone());
                ops::mse(g, y, t)
            },
            &mut rng,
        )?;
    }

    // Discretization + selective scan, with A = -exp(A_log) as in the model.
    {
        let (t, dc, n) = (5, 3, 4);
        let mut p = ParamSet::new();
        p.insert("u", rt(&mut rng, vec![t, dc]));
        p.insert("delta_raw", rt(&mut rng, vec![t, dc]));
        p.insert("a_log", rt(&mut rng, vec![dc, n]));
        p.insert("bseq", rt(&mut rng, vec![t, n]));
        p.insert("cseq", rt(&mut rng, vec![t, n]));
        p.insert("dskip", rt(&mut rng, vec![dc]));
        run(
            "ssm_scan",
            p,
            &|g, b| {
                let a_exp = ops::unary(g, Unary::Exp, b.id("a_log"));
                let a = ops::unary(g, Unary::Neg, a_exp);
                let delta = ops::unary(g, Unary::Softplus, b.id("delta_raw"));
                let abar = ops::discretize_a(g, delta, a);
                let bbar = ops::discretize_b(g, delta, a, b.id("bseq"), abar);
                let y = ops::selective_scan(g, b.id("u"), abar, bbar, b.id("cseq"), b.id("dskip"));
                ops::mean_sq(g, y)
            },
            &mut rng,
        )?;
    }

    // 6D -> rotation matrices -> FK -> velocity, the loss-path kinematics chain.
    {
        let joints = 4usize;
        let parents: Vec<isize> = vec![-1, 0, 1, 2];
        let offsets: Vec<[f64; 3]> = vec![[0.0; 3], [0.0, 0.4, 0.0], [0.3, 0.0, 0.0], [0.25, 0.0, 0.1]];
        let frames = 3usize;
        let mut p = ParamSet::new();
        // Random 6D values near identity to stay clear of degenerate frames.
        let mut sixd = Vec::with_capacity(frames * joints * 6);
        for _ in 0..frames * joints {
            for bv in [1.0, 0.0, 0.0, 0.0, 1.0, 0.0] {
                sixd.push(bv + rng.gen_range(-0.3..0.3));
            }
        }
        p.insert("sixd", Tensor::from_vec(vec![frames, joints * 6], sixd));
        p.insert("tau", rt(&mut rng, vec![frames, 3]));
        let target = rt(&mut rng, vec![frames, joints * 3]);
        run(
            "sixd_fk_velocity",
            p,
            &move |g, b| {
                let rot = ops::sixd_to_rotmat_batch(g, b.id("sixd"), joints);
                let pos = ops::fk(g, rot, b.id("tau"), &parents, &offsets);
                let t = g.constant(target.clone());
                let pos_loss = ops::mse(g, pos, t);
                let vel = ops::time_diff(g, pos);
                let vel_loss = ops::mean_sq(g, vel);
                ops::add(g, pos_loss, vel_loss)
            },
            &mut rng,
        )?;
    }

    // Column masking (the hand/body split).
    {
        let mut p = ParamSet::new();
        p.insert("x", rt(&mut rng, vec![4, 5]));
        run(
            "mask_replace",
            p,
            &|g, b| {
                let y = ops::mask_replace(g, b.id("x"), &[None, Some(1.0), None, Some(0.0), None]);
                ops::mean_sq(g, y)
            },
            &mut rng,
        )?;
    }

    Ok(worst)
}
