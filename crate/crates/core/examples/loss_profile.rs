use baton_core::denoiser::{init_params, DenoiserConfig, DenoiserEval};
use baton_core::diffusion::losses::{build_loss_graph, LossFlags, LossInputs, LossWeights};
use baton_core::diffusion::DiffusionSchedule;
use baton_core::kin::{toy9, NormStats};
use baton_core::nn::graph::Graph;
use baton_core::nn::params::{BoundParams, ParamSet};
use baton_core::nn::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let skel = toy9();
    let config = DenoiserConfig::toy(skel.frame_dim());
    let params: ParamSet<f32> = init_params(&config, 42).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = 120usize;
    let d = skel.frame_dim();
    let x = Tensor::from_vec(vec![t, d], (0..t * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>());
    let music = Tensor::from_vec(vec![t, 35], (0..t * 35).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>());
    let eps = Tensor::from_vec(vec![t, d], (0..t * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>());
    let stats = NormStats::identity(d);
    let schedule = DiffusionSchedule::default_schedule();
    let weights = LossWeights::default();
    let inputs = LossInputs { x_std: x.clone(), music: music.clone(), t: 500, eps, use_null: false };

    // Forward only, untracked.
    let reps = 20;
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut g = Graph::new(false);
        let bound = BoundParams::bind(&mut g, &params);
        let _ = build_loss_graph(&mut g, &bound, &config, &skel, &stats, &schedule, &weights, LossFlags::default(), &inputs, None).unwrap();
    }
    println!("loss fwd untracked: {:.1} ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);

    // Forward tracked.
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut g = Graph::new(true);
        let bound = BoundParams::bind(&mut g, &params);
        let _ = build_loss_graph(&mut g, &bound, &config, &skel, &stats, &schedule, &weights, LossFlags::default(), &inputs, None).unwrap();
    }
    println!("loss fwd tracked:   {:.1} ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);

    // Forward + backward.
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut g = Graph::new(true);
        let bound = BoundParams::bind(&mut g, &params);
        let nodes = build_loss_graph(&mut g, &bound, &config, &skel, &stats, &schedule, &weights, LossFlags::default(), &inputs, None).unwrap();
        let _ = g.backward(nodes.total);
    }
    println!("loss fwd+bwd:       {:.1} ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);

    // Bare denoiser forward for comparison.
    let eval = DenoiserEval::new(&config, &params);
    let mem = eval.encode(&music).unwrap();
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = eval.denoise(&x, 500, &mem).unwrap();
    }
    println!("denoise fwd only:   {:.1} ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = eval.encode(&music).unwrap();
    }
    println!("encode fwd only:    {:.1} ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);
}
