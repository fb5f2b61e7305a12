//! Per-op contracts: finite-difference battery plus the small analytic cases
//! each layer must satisfy.

use baton_core::nn::gradcheck::{check_graph_fn, check_layer_suite, grad_check};
use baton_core::nn::graph::Graph;
use baton_core::nn::layers::timestep_embedding;
use baton_core::nn::ops::{self, Unary};
use baton_core::nn::params::ParamSet;
use baton_core::nn::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[test]
fn layer_suite_passes_grad_check() {
    let report = check_layer_suite().expect("suite runs");
    assert!(
        report.max_rel_err < 1e-4,
        "max rel err {} at {:?}",
        report.max_rel_err,
        report.worst_probe
    );
}

#[test]
fn grad_check_quadratic_is_exact() {
    // f = sum(p^2): analytic 2p, finite differences agree to ~1e-8.
    let mut p = ParamSet::new();
    p.insert("p", Tensor::from_vec(vec![4], vec![0.5, -1.25, 2.0, 0.1]));
    let rep = check_graph_fn(
        &p,
        |g, b| {
            let sq = ops::unary(g, Unary::Square, b.id("p"));
            ops::sum_all(g, sq)
        },
        1e-4,
        100,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert!(rep.max_rel_err < 1e-8, "rel err {}", rep.max_rel_err);
}

#[test]
fn grad_check_detects_corrupted_gradient() {
    let mut p = ParamSet::new();
    p.insert("p", Tensor::from_vec(vec![3], vec![0.4, -0.7, 1.1]));
    let value_fn = |ps: &ParamSet<f64>| {
        let v = ps.get("p").unwrap();
        Ok(v.data().iter().map(|x| x * x).sum())
    };
    // Deliberately wrong analytic gradient (should be 2p).
    let mut analytic = BTreeMap::new();
    analytic.insert("p".to_string(), Tensor::from_vec(vec![3], vec![0.8, -1.4, 0.0]));
    let probes = vec![("p".to_string(), 2)];
    let rep = grad_check(value_fn, &p, &analytic, &probes, 1e-4).unwrap();
    assert!(rep.max_rel_err > 1e-2, "corruption not detected: {}", rep.max_rel_err);
}

#[test]
fn linear_identity_and_zero_input() {
    let mut g = Graph::<f64>::new(false);
    let x = g.leaf(Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let eye = g.leaf(Tensor::from_vec(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]));
    let zero_b = g.leaf(Tensor::zeros(vec![3]));
    let y = ops::linear(&mut g, x, eye, zero_b);
    assert_eq!(g.value(y).data(), g.value(x).data());

    let x0 = g.leaf(Tensor::zeros(vec![2, 3]));
    let b = g.leaf(Tensor::from_vec(vec![3], vec![0.5, -1.0, 2.0]));
    let y0 = ops::linear(&mut g, x0, eye, b);
    assert_eq!(g.value(y0).data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
}

#[test]
fn linear_matches_triple_loop_oracle_f32() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (t, din, dout) = (7, 5, 6);
    let xv: Vec<f32> = (0..t * din).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let wv: Vec<f32> = (0..din * dout).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let bv: Vec<f32> = (0..dout).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut g = Graph::<f32>::new(false);
    let x = g.leaf(Tensor::from_vec(vec![t, din], xv.clone()));
    let w = g.leaf(Tensor::from_vec(vec![din, dout], wv.clone()));
    let b = g.leaf(Tensor::from_vec(vec![dout], bv.clone()));
    let y = ops::linear(&mut g, x, w, b);
    for r in 0..t {
        for c in 0..dout {
            let mut acc = bv[c] as f64;
            for p in 0..din {
                acc += xv[r * din + p] as f64 * wv[p * dout + c] as f64;
            }
            let got = g.value(y).data()[r * dout + c] as f64;
            assert!((got - acc).abs() < 1e-5, "({r},{c}): {got} vs {acc}");
        }
    }
}

#[test]
fn conv_identity_kernels() {
    let x_data: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
    // k=1 kernel of ones is the identity.
    let mut g = Graph::<f64>::new(false);
    let x = g.leaf(Tensor::from_vec(vec![6, 2], x_data.clone()));
    let k1 = g.leaf(Tensor::from_vec(vec![1, 2], vec![1.0, 1.0]));
    let b0 = g.leaf(Tensor::zeros(vec![2]));
    let y = ops::conv1d_causal(&mut g, x, k1, b0);
    assert_eq!(g.value(y).data(), &x_data[..]);
    // k=4 kernel [0,0,0,1] per channel: only the last (current) tap fires.
    let k4 = g.leaf(Tensor::from_vec(vec![4, 2], vec![0., 0., 0., 0., 0., 0., 1., 1.]));
    let y4 = ops::conv1d_causal(&mut g, x, k4, b0);
    assert_eq!(g.value(y4).data(), &x_data[..]);
}

#[test]
fn conv_matches_direct_convolution_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (t, d, k) = (9, 3, 4);
    let xv: Vec<f64> = (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let kv: Vec<f64> = (0..k * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let bv: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut g = Graph::<f64>::new(false);
    let x = g.leaf(Tensor::from_vec(vec![t, d], xv.clone()));
    let ker = g.leaf(Tensor::from_vec(vec![k, d], kv.clone()));
    let bias = g.leaf(Tensor::from_vec(vec![d], bv.clone()));
    let y = ops::conv1d_causal(&mut g, x, ker, bias);
    for tt in 0..t {
        for c in 0..d {
            let mut acc = bv[c];
            for i in 0..k {
                let src = tt as isize - (k as isize - 1) + i as isize;
                if src >= 0 {
                    acc += kv[i * d + c] * xv[src as usize * d + c];
                }
            }
            assert!((g.value(y).data()[tt * d + c] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_is_causal() {
    // Perturbing x at frame t must not change outputs before t.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (t, d, k) = (8, 2, 4);
    let xv: Vec<f64> = (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let kv: Vec<f64> = (0..k * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let run = |x: &[f64]| {
        let mut g = Graph::<f64>::new(false);
        let xn = g.leaf(Tensor::from_vec(vec![t, d], x.to_vec()));
        let kn = g.leaf(Tensor::from_vec(vec![k, d], kv.clone()));
        let bn = g.leaf(Tensor::zeros(vec![d]));
        let y = ops::conv1d_causal(&mut g, xn, kn, bn);
        g.value(y).data().to_vec()
    };
    let y0 = run(&xv);
    let mut xp = xv.clone();
    xp[4 * d] += 1.0;
    let y1 = run(&xp);
    for tt in 0..4 {
        for c in 0..d {
            assert_eq!(y0[tt * d + c], y1[tt * d + c], "frame {tt} changed");
        }
    }
    assert_ne!(y0[4 * d], y1[4 * d]);
}

#[test]
fn layer_norm_constant_row_and_shift_invariance() {
    let mut g = Graph::<f64>::new(false);
    let x = g.leaf(Tensor::from_vec(vec![1, 4], vec![3.0; 4]));
    let gamma = g.leaf(Tensor::from_vec(vec![4], vec![1.0; 4]));
    let beta = g.leaf(Tensor::zeros(vec![4]));
    let y = ops::layer_norm(&mut g, x, gamma, beta, 1e-5);
    for &v in g.value(y).data() {
        assert!(v.abs() < 1e-9);
    }
    // Shift invariance.
    let xr = g.leaf(Tensor::from_vec(vec![1, 4], vec![0.3, -1.2, 0.9, 2.0]));
    let xs = g.leaf(Tensor::from_vec(vec![1, 4], vec![0.3 + 5.0, -1.2 + 5.0, 0.9 + 5.0, 2.0 + 5.0]));
    let y1 = ops::layer_norm(&mut g, xr, gamma, beta, 1e-5);
    let y2 = ops::layer_norm(&mut g, xs, gamma, beta, 1e-5);
    assert!(g.value(y1).max_abs_diff(g.value(y2)) < 1e-9);
}

#[test]
fn layer_norm_matches_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (t, d) = (4, 6);
    let xv: Vec<f64> = (0..t * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let gv: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..1.5)).collect();
    let bv: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let mut g = Graph::<f64>::new(false);
    let x = g.leaf(Tensor::from_vec(vec![t, d], xv.clone()));
    let gamma = g.leaf(Tensor::from_vec(vec![d], gv.clone()));
    let beta = g.leaf(Tensor::from_vec(vec![d], bv.clone()));
    let y = ops::layer_norm(&mut g, x, gamma, beta, 1e-5);
    for r in 0..t {
        let row = &xv[r * d..(r + 1) * d];
        let mean: f64 = row.iter().sum::<f64>() / d as f64;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        for c in 0..d {
            let want = (row[c] - mean) / (var + 1e-5).sqrt() * gv[c] + bv[c];
            assert!((g.value(y).data()[r * d + c] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_single_memory_slot_and_uniform_keys() {
    let mut g = Graph::<f64>::new(false);
    // T_k = 1: softmax of a singleton is 1, output equals v for every query.
    let q = g.leaf(Tensor::from_vec(vec![3, 4], (0..12).map(|i| i as f64 * 0.1).collect()));
    let k = g.leaf(Tensor::from_vec(vec![1, 4], vec![0.5, -0.3, 0.2, 0.9]));
    let v = g.leaf(Tensor::from_vec(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]));
    let y = ops::attention(&mut g, q, k, v, 2, 0.0, None);
    for r in 0..3 {
        for c in 0..4 {
            assert!((g.value(y).data()[r * 4 + c] - (c as f64 + 1.0)).abs() < 1e-12);
        }
    }
    // All keys identical: attention is uniform and the output is the mean of v.
    let k_same = g.leaf(Tensor::from_vec(vec![3, 4], vec![0.5, -0.3, 0.2, 0.9].repeat(3)));
    let v3 = g.leaf(Tensor::from_vec(vec![3, 4], (0..12).map(|i| i as f64).collect()));
    let y2 = ops::attention(&mut g, q, k_same, v3, 2, 0.0, None);
    for r in 0..3 {
        for c in 0..4 {
            let mean = (c as f64 + (c + 4) as f64 + (c + 8) as f64) / 3.0;
            assert!((g.value(y2).data()[r * 4 + c] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_matches_brute_force_softmax_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (tq, tk, d, heads) = (4, 6, 8, 4);
    let qv: Vec<f64> = (0..tq * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let kv: Vec<f64> = (0..tk * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let vv: Vec<f64> = (0..tk * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut g = Graph::<f64>::new(false);
    let q = g.leaf(Tensor::from_vec(vec![tq, d], qv.clone()));
    let k = g.leaf(Tensor::from_vec(vec![tk, d], kv.clone()));
    let v = g.leaf(Tensor::from_vec(vec![tk, d], vv.clone()));
    let y = ops::attention(&mut g, q, k, v, heads, 0.0, None);
    let dh = d / heads;
    for h in 0..heads {
        for r in 0..tq {
            let mut scores = vec![0.0f64; tk];
            for (j, s) in scores.iter_mut().enumerate() {
                let mut acc = 0.0;
                for p in 0..dh {
                    acc += qv[r * d + h * dh + p] * kv[j * d + h * dh + p];
                }
                *s = acc / (dh as f64).sqrt();
            }
            let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            for p in 0..dh {
                let mut want = 0.0;
                for j in 0..tk {
                    want += exps[j] / z * vv[j * d + h * dh + p];
                }
                let got = g.value(y).data()[r * d + h * dh + p];
                assert!((got - want).abs() < 1e-5, "h{h} r{r} p{p}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn attention_memory_permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (tq, tk, d) = (3, 5, 4);
    let qv: Vec<f64> = (0..tq * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let kv: Vec<f64> = (0..tk * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let vv: Vec<f64> = (0..tk * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let perm = [3usize, 0, 4, 1, 2];
    let permute = |x: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (dst, &src) in perm.iter().enumerate() {
            out[dst * d..(dst + 1) * d].copy_from_slice(&x[src * d..(src + 1) * d]);
        }
        out
    };
    let run = |kx: &[f64], vx: &[f64]| {
        let mut g = Graph::<f64>::new(false);
        let q = g.leaf(Tensor::from_vec(vec![tq, d], qv.clone()));
        let k = g.leaf(Tensor::from_vec(vec![tk, d], kx.to_vec()));
        let v = g.leaf(Tensor::from_vec(vec![tk, d], vx.to_vec()));
        let y = ops::attention(&mut g, q, k, v, 2, 0.0, None);
        g.value(y).data().to_vec()
    };
    let base = run(&kv, &vv);
    let perm_out = run(&permute(&kv), &permute(&vv));
    for (a, b) in base.iter().zip(&perm_out) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn film_identity_at_zero_and_beta_only() {
    let mut g = Graph::<f64>::new(false);
    let x = g.leaf(Tensor::from_vec(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]));
    let zero = g.leaf(Tensor::zeros(vec![1, 3]));
    let y = ops::film(&mut g, x, zero, zero);
    assert_eq!(g.value(y).data(), g.value(x).data());

    let x0 = g.leaf(Tensor::zeros(vec![2, 3]));
    let beta = g.leaf(Tensor::from_vec(vec![1, 3], vec![0.7, -0.1, 0.4]));
    let y2 = ops::film(&mut g, x0, zero, beta);
    assert_eq!(g.value(y2).data(), &[0.7, -0.1, 0.4, 0.7, -0.1, 0.4]);
}

#[test]
fn timestep_embedding_contracts() {
    // t = 0: sine half all zeros, cosine half all ones.
    let e0 = timestep_embedding::<f64>(0, 8);
    assert_eq!(&e0.data()[..4], &[0.0; 4]);
    assert_eq!(&e0.data()[4..], &[1.0; 4]);
    // ||emb||^2 = d/2 for every t.
    for t in [1usize, 17, 500, 999] {
        let e = timestep_embedding::<f64>(t, 16);
        let n2: f64 = e.data().iter().map(|v| v * v).sum();
        assert!((n2 - 8.0).abs() < 1e-9, "t={t} norm^2={n2}");
    }
    // Distinct timesteps give distinct vectors over the training range.
    let embs: Vec<Vec<u64>> = (0..1000)
        .map(|t| timestep_embedding::<f64>(t, 16).data().iter().map(|v| v.to_bits()).collect())
        .collect();
    for t in 1..1000 {
        assert_ne!(embs[t], embs[t - 1]);
        assert_ne!(embs[t], embs[0]);
    }
}

#[test]
fn dropout_eval_identity_and_train_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut g = Graph::<f64>::new(false);
    let x = g.leaf(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
    let y = ops::dropout(&mut g, x, 0.0, &mut rng);
    assert_eq!(g.value(y).data(), g.value(x).data());
    let y2 = ops::dropout(&mut g, x, 0.5, &mut rng);
    for (&a, &b) in g.value(x).data().iter().zip(g.value(y2).data()) {
        assert!(b == 0.0 || (b - a * 2.0).abs() < 1e-12);
    }
}

#[test]
fn graph_constants_do_not_require_grad() {
    let mut g = Graph::<f64>::new(true);
    let x = g.leaf(Tensor::from_vec(vec![2], vec![1.0, 2.0]));
    let c = g.constant(Tensor::from_vec(vec![2], vec![5.0, 5.0]));
    let y = ops::mul(&mut g, x, c);
    let loss = ops::sum_all(&mut g, y);
    let grads = g.backward(loss);
    let gx = grads.get(x, g.value(x));
    assert_eq!(gx.data(), &[5.0, 5.0]);
}
