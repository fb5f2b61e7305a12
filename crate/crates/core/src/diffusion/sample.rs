//! Guided sampling: classifier-free guidance, the deterministic DDIM loop
//! (x0 parameterization), and the single DDPM re-noising step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::denoiser::{DenoiserBundle, DenoiserEval};
use crate::error::{Error, Result};
use crate::kin::ops::destandardize;
use crate::kin::{MotionSequence, Skeleton};
use crate::nn::ops::sigmoid;
use crate::nn::tensor::Tensor;

use super::edit::CompiledMask;
use super::schedule::{q_sample, standard_normal, DiffusionSchedule};

/// Guided prediction: x_null + w (x_cond - x_null). w = 1 short-circuits to
/// the conditional forward alone and w = 0 to the unconditional one (exact
/// algebraic identities).
pub fn cfg_predict(
    eval: &DenoiserEval<'_, f32>,
    z: &Tensor<f32>,
    t: usize,
    memory_cond: &Tensor<f32>,
    memory_null: &Tensor<f32>,
    w: f64,
) -> Result<Tensor<f32>> {
    if w == 1.0 {
        return eval.denoise(z, t, memory_cond);
    }
    if w == 0.0 {
        return eval.denoise(z, t, memory_null);
    }
    let cond = eval.denoise(z, t, memory_cond)?;
    let null = eval.denoise(z, t, memory_null)?;
    let wf = w as f32;
    Ok(null.zip_map(&cond, |n, c| n + wf * (c - n)))
}

#[derive(Clone, Debug)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 50, guidance: 4.0, seed: 42 }
    }
}

/// Strictly decreasing DDIM sub-schedule over 1..=t_max.
pub fn ddim_timesteps(t_max: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > t_max {
        return Err(Error::ConfigError(format!("steps {steps} outside 1..={t_max}")));
    }
    let mut ts: Vec<usize> = (1..=steps)
        .map(|i| ((i as f64 / steps as f64) * t_max as f64).round().max(1.0) as usize)
        .collect();
    ts.dedup();
    ts.reverse();
    Ok(ts)
}

/// Standardized-domain DDIM loop (eta = 0). Returns the final clean
/// prediction, T x d_motion. The optional mask re-imposes known values at
/// every step and exactly at the end; the observer sees (step index, next
/// timestep, latent) after each update, for instrumented tests.
pub fn ddim_core_observed(
    bundle: &DenoiserBundle,
    schedule: &DiffusionSchedule,
    memory_cond: &Tensor<f32>,
    sampler: &SamplerConfig,
    t_frames: usize,
    mask: Option<&CompiledMask>,
    mut observer: Option<&mut dyn FnMut(usize, usize, &Tensor<f32>)>,
) -> Result<Tensor<f32>> {
    let eval = DenoiserEval::new(&bundle.config, &bundle.params);
    let d = bundle.config.d_motion;
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let memory_null = eval.null_memory(t_frames);

    let mut z = Tensor::from_vec(vec![t_frames, d], standard_normal(t_frames * d, &mut rng));
    if let Some(m) = mask {
        m.check(t_frames, d)?;
        let noised =
            q_sample(&m.known_std, schedule.t_steps, &standard_normal(t_frames * d, &mut rng), schedule)?;
        z = m.overlay(&z, &noised);
    }
    let ts = ddim_timesteps(schedule.t_steps, sampler.steps)?;
    let mut x_hat = Tensor::zeros(vec![t_frames, d]);
    for (i, &t) in ts.iter().enumerate() {
        x_hat = cfg_predict(&eval, &z, t, memory_cond, &memory_null, sampler.guidance)?;
        if !x_hat.all_finite() {
            return Err(Error::NumericalError(format!("non-finite prediction at step index {i} (t = {t})")));
        }
        let t_next = if i + 1 < ts.len() { ts[i + 1] } else { 0 };
        let sa_t = schedule.sqrt_alpha_bar(t) as f32;
        let sb_t = schedule.sqrt_one_minus_alpha_bar(t) as f32;
        let sa_n = schedule.sqrt_alpha_bar(t_next) as f32;
        let sb_n = schedule.sqrt_one_minus_alpha_bar(t_next) as f32;
        let zd = z.data();
        let xd = x_hat.data();
        let mut next = Vec::with_capacity(zd.len());
        for (zi, xi) in zd.iter().zip(xd) {
            let eps_hat = (zi - sa_t * xi) / sb_t;
            next.push(sa_n * xi + sb_n * eps_hat);
        }
        z = Tensor::from_vec(vec![t_frames, d], next);
        if let Some(m) = mask {
            if t_next > 0 {
                let noise = standard_normal(t_frames * d, &mut rng);
                let noised = q_sample(&m.known_std, t_next, &noise, schedule)?;
                z = m.overlay(&z, &noised);
            }
        }
        if !z.all_finite() {
            return Err(Error::NumericalError(format!("non-finite latent at step index {i} (t = {t})")));
        }
        if let Some(obs) = observer.as_deref_mut() {
            obs(i, t_next, &z);
        }
    }
    if let Some(m) = mask {
        x_hat = m.overlay(&x_hat, &m.known_std);
    }
    Ok(x_hat)
}

pub fn ddim_core(
    bundle: &DenoiserBundle,
    schedule: &DiffusionSchedule,
    memory_cond: &Tensor<f32>,
    sampler: &SamplerConfig,
    t_frames: usize,
    mask: Option<&CompiledMask>,
) -> Result<Tensor<f32>> {
    ddim_core_observed(bundle, schedule, memory_cond, sampler, t_frames, mask, None)
}

/// Convert a standardized prediction into a motion sequence: destandardize,
/// split off contact logits (sigmoid into [0,1]).
pub fn motion_from_prediction(
    x_std: &Tensor<f32>,
    skel: &Skeleton,
    bundle: &DenoiserBundle,
    fps: u32,
) -> Result<MotionSequence> {
    let (t, d) = x_std.dims2();
    let k = skel.n_contacts();
    let d_export = skel.frame_dim();
    if d != d_export + k {
        return Err(Error::ShapeError(format!("prediction width {d} != {d_export} + {k}")));
    }
    let raw = destandardize(x_std.data(), &bundle.norm_stats)?;
    let mut flat = Vec::with_capacity(t * d_export);
    let mut contacts = if k > 0 { Some(Vec::with_capacity(t * k)) } else { None };
    for row in raw.chunks_exact(d) {
        flat.extend_from_slice(&row[..d_export]);
        if let Some(c) = contacts.as_mut() {
            c.extend(row[d_export..].iter().map(|&v| sigmoid(v)));
        }
    }
    MotionSequence::from_flat(&flat, skel.n_joints(), fps, contacts)
}

/// Music-conditioned generation: encode the features, run DDIM, destandardize.
/// The feature sequence must cover `t_frames` (extra frames are truncated).
pub fn ddim_sample(
    bundle: &DenoiserBundle,
    skel: &Skeleton,
    schedule: &DiffusionSchedule,
    music: &Tensor<f32>,
    sampler: &SamplerConfig,
    t_frames: usize,
) -> Result<MotionSequence> {
    let memory = encode_music(bundle, music, t_frames)?;
    let x_std = ddim_core(bundle, schedule, &memory, sampler, t_frames, None)?;
    motion_from_prediction(&x_std, skel, bundle, 30)
}

pub fn encode_music(bundle: &DenoiserBundle, music: &Tensor<f32>, t_frames: usize) -> Result<Tensor<f32>> {
    let (tm, dm) = music.dims2();
    if tm < t_frames {
        return Err(Error::ShapeError(format!("music covers {tm} frames, need {t_frames}")));
    }
    let eval = DenoiserEval::new(&bundle.config, &bundle.params);
    let window = Tensor::from_vec(vec![t_frames, dm], music.data()[..t_frames * dm].to_vec());
    eval.encode(&window)
}

/// How the reverse step draws z_{t-1} from the prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DdpmRule {
    /// Re-noise the clean prediction to t-1: z ~ q(x_hat, t-1).
    #[default]
    RenoisePrediction,
    /// Textbook posterior mean plus sigma_t noise.
    PosteriorMean,
}

/// One ancestral step from timestep t given the clean prediction.
pub fn ddpm_step(
    z_t: &Tensor<f32>,
    t: usize,
    x_hat: &Tensor<f32>,
    rng: &mut ChaCha8Rng,
    schedule: &DiffusionSchedule,
    rule: DdpmRule,
) -> Result<Tensor<f32>> {
    schedule.check_t(t)?;
    let n = x_hat.numel();
    let eps = standard_normal(n, rng);
    let out = match rule {
        DdpmRule::RenoisePrediction => {
            let sa = schedule.sqrt_alpha_bar(t - 1) as f32;
            let sb = schedule.sqrt_one_minus_alpha_bar(t - 1) as f32;
            x_hat
                .data()
                .iter()
                .zip(&eps)
                .map(|(&x, &e)| sa * x + sb * e)
                .collect::<Vec<f32>>()
        }
        DdpmRule::PosteriorMean => {
            let ab_t = schedule.alpha_bar[t];
            let ab_prev = schedule.alpha_bar[t - 1];
            let beta_t = schedule.betas[t - 1];
            let alpha_t = 1.0 - beta_t;
            let coef_x0 = (ab_prev.sqrt() * beta_t) / (1.0 - ab_t);
            let coef_zt = (alpha_t.sqrt() * (1.0 - ab_prev)) / (1.0 - ab_t);
            let sigma = ((1.0 - ab_prev) / (1.0 - ab_t) * beta_t).sqrt();
            x_hat
                .data()
                .iter()
                .zip(z_t.data())
                .zip(&eps)
                .map(|((&x, &z), &e)| {
                    (coef_x0 * x as f64 + coef_zt * z as f64 + if t > 1 { sigma * e as f64 } else { 0.0 })
                        as f32
                })
                .collect::<Vec<f32>>()
        }
    };
    Ok(Tensor::from_vec(x_hat.shape().to_vec(), out))
}
