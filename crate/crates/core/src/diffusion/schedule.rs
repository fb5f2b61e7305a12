//! Linear noise schedule and the forward noising process.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_T_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Per-timestep noising tables; index t runs 1..=t_steps, alpha_bar[0] = 1.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DiffusionSchedule {
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// beta[t-1] is the variance added at step t.
    pub betas: Vec<f64>,
    /// alpha_bar[t] = prod_{s<=t} (1 - beta_s); length t_steps + 1.
    pub alpha_bar: Vec<f64>,
}

pub fn make_schedule(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if t_steps == 0 {
        return Err(Error::ConfigError("schedule needs at least one step".into()));
    }
    if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
        return Err(Error::ConfigError(format!(
            "beta range ({beta_start}, {beta_end}) must satisfy 0 < start < end < 1"
        )));
    }
    let betas: Vec<f64> = (0..t_steps)
        .map(|i| {
            if t_steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bar = Vec::with_capacity(t_steps + 1);
    alpha_bar.push(1.0);
    let mut prod = 1.0;
    for &b in &betas {
        prod *= 1.0 - b;
        alpha_bar.push(prod);
    }
    Ok(DiffusionSchedule { t_steps, beta_start, beta_end, betas, alpha_bar })
}

impl DiffusionSchedule {
    pub fn default_schedule() -> Self {
        make_schedule(DEFAULT_T_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule")
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_steps {
            return Err(Error::ConfigError(format!("timestep {t} outside 1..={}", self.t_steps)));
        }
        Ok(())
    }

    pub fn sqrt_alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    pub fn sqrt_one_minus_alpha_bar(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }
}

/// z_t = sqrt(alpha_bar_t) x + sqrt(1 - alpha_bar_t) eps, elementwise.
pub fn q_sample(x: &[f32], t: usize, eps: &[f32], schedule: &DiffusionSchedule) -> Result<Vec<f32>> {
    schedule.check_t(t)?;
    if x.len() != eps.len() {
        return Err(Error::ShapeError(format!("x len {} vs eps len {}", x.len(), eps.len())));
    }
    let sa = schedule.sqrt_alpha_bar(t) as f32;
    let sb = schedule.sqrt_one_minus_alpha_bar(t) as f32;
    Ok(x.iter().zip(eps).map(|(&xv, &ev)| sa * xv + sb * ev).collect())
}

/// Standard-normal noise buffer.
pub fn standard_normal(n: usize, rng: &mut impl Rng) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect()
}
