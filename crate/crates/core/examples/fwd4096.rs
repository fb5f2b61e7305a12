use baton_core::bench::{bench_bundle, BenchConfig};
use baton_core::denoiser::{Backbone, DenoiserEval};
use baton_core::nn::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let bc = BenchConfig::default();
    for backbone in [Backbone::Bimamba, Backbone::Attention] {
        let bundle = bench_bundle(&bc, backbone).unwrap();
        let eval = DenoiserEval::new(&bundle.config, &bundle.params);
        for t in [1024usize, 4096] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let music = Tensor::from_vec(vec![t, 35], (0..t*35).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>());
            let z = Tensor::from_vec(vec![t, bundle.config.d_motion], (0..t*bundle.config.d_motion).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>());
            let mem = eval.encode(&music).unwrap();
            let t0 = Instant::now();
            let reps = 3;
            for _ in 0..reps { let _ = eval.denoise(&z, 500, &mem).unwrap(); }
            let dt = t0.elapsed().as_secs_f64() / reps as f64;
            println!("{backbone:?} T={t}: denoise fwd {:.3} s -> DDIM-50 ~ {:.1} s", dt, dt * 50.0);
        }
    }
}
