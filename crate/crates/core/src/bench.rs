//! Latency benchmarking: generation wall time versus sequence length for the
//! two temporal backbones, plus log-log scaling exponents fitted on
//! backbone-stack forward timings (the component the complexity claim is
//! about; the full sampler shares quadratic cross-attention between both
//! backbones, so its latency is compared directly instead).

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{backbone_forward, init_params, Backbone, DenoiserBundle, DenoiserConfig};
use crate::diffusion::sample::{ddim_core, SamplerConfig};
use crate::diffusion::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::kin::NormStats;
use crate::nn::graph::Graph;
use crate::nn::params::{BoundParams, ParamSet};
use crate::nn::tensor::Tensor;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum TimingKind {
    /// Full DDIM sampling loop (condition encoding + denoising steps).
    Sampler,
    /// Backbone stack forward only.
    Backbone,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatencyPoint {
    pub t_frames: usize,
    /// Median over reps; None when the point was capped by the memory guard.
    pub wall_time_s: Option<f64>,
    pub reps: usize,
    pub backbone: Backbone,
    pub kind: TimingKind,
    pub capped: bool,
}

/// Rough peak-allocation estimate in bytes for one denoiser forward.
fn memory_estimate(config: &DenoiserConfig, t: usize) -> usize {
    let d = config.d_model;
    let di = config.ssm.expand * d;
    let per_block = t * t * 4            // one attention score matrix at a time
        + 40 * t * d * 4                 // op outputs along the block
        + 2 * t * di * config.ssm.n_state * 4; // discretized tables
    per_block * config.n_blocks.max(1) + t * d * 16
}

fn synth_features(t: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(vec![t, 35], (0..t * 35).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Median wall time of the full DDIM sampling loop at a given length.
/// One warm-up run precedes timing; the timer brackets condition encoding
/// and the denoising loop only (feature synthesis happens outside it).
pub fn measure_latency(
    bundle: &DenoiserBundle,
    schedule: &DiffusionSchedule,
    sampler: &SamplerConfig,
    t_frames: usize,
    reps: usize,
    mem_cap_bytes: usize,
) -> Result<LatencyPoint> {
    if t_frames == 0 {
        return Err(Error::ConfigError("cannot benchmark zero frames".into()));
    }
    if reps < 5 {
        return Err(Error::ConfigError("latency points need at least 5 reps".into()));
    }
    let backbone = bundle.config.backbone;
    if memory_estimate(&bundle.config, t_frames) > mem_cap_bytes {
        return Ok(LatencyPoint {
            t_frames,
            wall_time_s: None,
            reps,
            backbone,
            kind: TimingKind::Sampler,
            capped: true,
        });
    }
    let music = synth_features(t_frames, 7);
    let eval = crate::denoiser::DenoiserEval::new(&bundle.config, &bundle.params);

    let run = || -> Result<Tensor<f32>> {
        let memory = eval.encode(&music)?;
        ddim_core(bundle, schedule, &memory, sampler, t_frames, None)
    };
    let warm = run()?; // warm-up, also the determinism reference
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        let out = run()?;
        times.push(t0.elapsed().as_secs_f64());
        if out != warm {
            return Err(Error::NumericalError("timed run diverged from warm-up output".into()));
        }
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = times[times.len() / 2];
    Ok(LatencyPoint {
        t_frames,
        wall_time_s: Some(median),
        reps,
        backbone,
        kind: TimingKind::Sampler,
        capped: false,
    })
}

/// Median wall time of one backbone-stack forward at a given length.
pub fn measure_backbone_forward(
    params: &ParamSet<f32>,
    config: &DenoiserConfig,
    t_frames: usize,
    reps: usize,
) -> Result<LatencyPoint> {
    if t_frames == 0 {
        return Err(Error::ConfigError("cannot benchmark zero frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Tensor::from_vec(
        vec![t_frames, config.d_model],
        (0..t_frames * config.d_model).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<f32>>(),
    );
    let run = || {
        let mut g = Graph::new(false);
        let bound = BoundParams::bind(&mut g, params);
        let xn = g.constant(x.clone());
        let y = backbone_forward(&mut g, &bound, config, xn);
        g.value(y).data()[0]
    };
    let _ = run();
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        let _ = std::hint::black_box(run());
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(LatencyPoint {
        t_frames,
        wall_time_s: Some(times[times.len() / 2]),
        reps,
        backbone: config.backbone,
        kind: TimingKind::Backbone,
        capped: false,
    })
}

/// Least-squares slope of log(time) against log(T).
pub fn fit_scaling_exponent(points: &[(f64, f64)]) -> Result<f64> {
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::ConfigError("scaling fit needs at least 3 distinct lengths".into()));
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(t, time) in points {
        if t <= 0.0 || time <= 0.0 {
            return Err(Error::ConfigError("scaling fit needs positive lengths and times".into()));
        }
        let x = t.ln();
        let y = time.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    Ok((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchConfig {
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_cond_layers: usize,
    pub grid: Vec<usize>,
    pub reps: usize,
    pub steps: usize,
    pub guidance: f64,
    pub seed: u64,
    /// Memory guard; estimated-over points report as capped.
    pub mem_cap_bytes: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_blocks: 1,
            n_cond_layers: 1,
            grid: vec![256, 512, 1024, 2048, 4096],
            reps: 5,
            steps: 50,
            guidance: 1.0,
            seed: 42,
            mem_cap_bytes: 6 * 1024 * 1024 * 1024,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub latency: Vec<LatencyPoint>,
    pub backbone_points: Vec<LatencyPoint>,
    pub exponent_bimamba: f64,
    pub exponent_attention: f64,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,backbone,t_frames,wall_time_s,reps,capped\n");
        for p in self.latency.iter().chain(&self.backbone_points) {
            out.push_str(&format!(
                "{:?},{:?},{},{},{},{}\n",
                p.kind,
                p.backbone,
                p.t_frames,
                p.wall_time_s.map(|v| format!("{v:.6}")).unwrap_or_else(|| "".into()),
                p.reps,
                p.capped
            ));
        }
        out.push_str(&format!("exponent,Bimamba,,{:.4},,\n", self.exponent_bimamba));
        out.push_str(&format!("exponent,Attention,,{:.4},,\n", self.exponent_attention));
        out
    }

    /// Latency-table text, one row per length.
    pub fn table(&self) -> String {
        let mut out = String::from("backbone      T      sampler[s]   backbone-fwd[s]\n");
        for &t in &self.config.grid {
            for backbone in [Backbone::Bimamba, Backbone::Attention] {
                let samp = self
                    .latency
                    .iter()
                    .find(|p| p.t_frames == t && p.backbone == backbone)
                    .and_then(|p| p.wall_time_s);
                let fwd = self
                    .backbone_points
                    .iter()
                    .find(|p| p.t_frames == t && p.backbone == backbone)
                    .and_then(|p| p.wall_time_s);
                out.push_str(&format!(
                    "{:<12} {:>6} {:>12} {:>16}\n",
                    format!("{backbone:?}"),
                    t,
                    samp.map(|v| format!("{v:.3}")).unwrap_or_else(|| "capped".into()),
                    fwd.map(|v| format!("{v:.4}")).unwrap_or_else(|| "capped".into()),
                ));
            }
        }
        out.push_str(&format!(
            "fitted exponent (backbone fwd): bimamba {:.3}, attention {:.3}\n",
            self.exponent_bimamba, self.exponent_attention
        ));
        out
    }
}

/// Random-weight bundle for a backbone (latency is parameter-value
/// independent; weights only need the right shapes).
pub fn bench_bundle(bc: &BenchConfig, backbone: Backbone) -> Result<DenoiserBundle> {
    let skel = crate::kin::toy9();
    let d_motion = skel.frame_dim();
    let mut config = DenoiserConfig::bench(d_motion);
    config.d_model = bc.d_model;
    config.n_blocks = bc.n_blocks;
    config.n_cond_layers = bc.n_cond_layers;
    config.backbone = backbone;
    let params = init_params(&config, bc.seed)?;
    Ok(DenoiserBundle { config, params, norm_stats: NormStats::identity(d_motion) })
}

/// The full grid: sampler latency and backbone-forward timings for both
/// backbones, plus fitted exponents. Runs serially on one worker.
pub fn run_bench_suite(bc: &BenchConfig) -> Result<BenchReport> {
    let schedule = DiffusionSchedule::default_schedule();
    let sampler = SamplerConfig { steps: bc.steps, guidance: bc.guidance, seed: bc.seed };
    let mut latency = Vec::new();
    let mut backbone_points = Vec::new();
    for backbone in [Backbone::Bimamba, Backbone::Attention] {
        let bundle = bench_bundle(bc, backbone)?;
        for &t in &bc.grid {
            latency.push(measure_latency(&bundle, &schedule, &sampler, t, bc.reps, bc.mem_cap_bytes)?);
            backbone_points.push(measure_backbone_forward(&bundle.params, &bundle.config, t, bc.reps)?);
        }
    }
    let fit_points = |kind: Backbone, points: &[LatencyPoint]| -> Result<f64> {
        let pts: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| p.backbone == kind && !p.capped)
            .filter_map(|p| p.wall_time_s.map(|w| (p.t_frames as f64, w)))
            .collect();
        fit_scaling_exponent(&pts)
    };
    let exponent_bimamba = fit_points(Backbone::Bimamba, &backbone_points)?;
    let exponent_attention = fit_points(Backbone::Attention, &backbone_points)?;
    Ok(BenchReport {
        config: bc.clone(),
        latency,
        backbone_points,
        exponent_bimamba,
        exponent_attention,
    })
}
