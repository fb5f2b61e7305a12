use baton_core::nn::graph::Graph;
use baton_core::nn::ops;
use baton_core::nn::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let t = 4096usize;
    let d = 32usize;
    let di = 64usize;
    let n = 16usize;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rand_t = |shape: Vec<usize>| -> Tensor<f32> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>())
    };
    let q = rand_t(vec![t, d]);
    let k = rand_t(vec![t, d]);
    let v = rand_t(vec![t, d]);
    let reps = 3;

    let mut g = Graph::<f32>::new(false);
    let (qn, kn, vn) = (g.constant(q), g.constant(k), g.constant(v));
    let t0 = Instant::now();
    for _ in 0..reps { let _ = ops::attention(&mut g, qn, kn, vn, 4, 0.0, None); }
    println!("attention core (T=4096, d=32, h=4): {:.3} s", t0.elapsed().as_secs_f64() / reps as f64);

    // fused scan
    let u = rand_t(vec![t, di]);
    let delta = rand_t(vec![t, di]).map(|x| x.abs() * 0.05 + 0.001);
    let a = rand_t(vec![di, n]).map(|x| -(x.abs() * 4.0 + 0.5));
    let b = rand_t(vec![t, n]);
    let c = rand_t(vec![t, n]);
    let dsk = rand_t(vec![di]);
    let t0 = Instant::now();
    for _ in 0..reps { let _ = ops::fused_scan_forward(&u, &delta, &a, &b, &c, &dsk); }
    println!("fused scan (T=4096, di=64, N=16): {:.3} s", t0.elapsed().as_secs_f64() / reps as f64);

    // matmul thin-k: 4096x64 * 64x128 style projections
    let x = rand_t(vec![t, di]);
    let w = rand_t(vec![di, di]);
    let xn = g.constant(x);
    let wn = g.constant(w);
    let t0 = Instant::now();
    for _ in 0..reps { let _ = ops::matmul(&mut g, xn, wn); }
    println!("matmul 4096x64x64: {:.4} s", t0.elapsed().as_secs_f64() / reps as f64);

    // layer_norm and elementwise over T x d
    let gm = g.constant(rand_t(vec![d]));
    let bt = g.constant(rand_t(vec![d]));
    let xn2 = g.constant(rand_t(vec![t, d]));
    let t0 = Instant::now();
    for _ in 0..reps { let _ = ops::layer_norm(&mut g, xn2, gm, bt, 1e-5); }
    println!("layer_norm 4096x32: {:.4} s", t0.elapsed().as_secs_f64() / reps as f64);

    let t0 = Instant::now();
    for _ in 0..reps { let _ = ops::unary(&mut g, ops::Unary::Silu, xn); }
    println!("silu 4096x64: {:.4} s", t0.elapsed().as_secs_f64() / reps as f64);

    let ker = g.constant(rand_t(vec![4, di]));
    let cb = g.constant(rand_t(vec![di]));
    let t0 = Instant::now();
    for _ in 0..reps { let _ = ops::conv1d_causal(&mut g, xn, ker, cb); }
    println!("conv 4096x64 k4: {:.4} s", t0.elapsed().as_secs_f64() / reps as f64);
}
