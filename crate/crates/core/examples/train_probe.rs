use baton_core::denoiser::DenoiserConfig;
use baton_core::diffusion::{train, TrainConfig, TrainItem};
use baton_core::kin::toy9;
use baton_core::nn::tensor::Tensor;
use baton_core::toy::make_dataset;
use std::time::Instant;

fn main() {
    let skel = toy9();
    let ds = make_dataset(16, 2, 42).unwrap();
    let items: Vec<TrainItem> = ds
        .train
        .iter()
        .map(|it| TrainItem {
            music: Tensor::from_vec(vec![it.features.n_frames, 35], it.features.frames.clone()),
            motion: it.motion.clone(),
        })
        .collect();
    let config = DenoiserConfig::toy(skel.frame_dim());
    let tc = TrainConfig { steps: 20, batch_size: 16, window: 120, ckpt_every: 1000, ..TrainConfig::default() };
    let t0 = Instant::now();
    let out = train(&items, &skel, &config, &tc, |_, _, _| Ok(())).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("20 steps in {:.2} s -> {:.0} ms/step -> 2000 steps ~ {:.1} min", dt, dt / 20.0 * 1000.0, dt / 20.0 * 2000.0 / 60.0);
    println!("first loss {:.4}, last {:.4}", out.history[0].1.total, out.history.last().unwrap().1.total);
}
