//! Tempo estimation by envelope autocorrelation and beat placement by
//! dynamic-programming alignment to the tempo grid.

use crate::error::{Error, Result};

pub const BPM_MIN: f64 = 40.0;
pub const BPM_MAX: f64 = 200.0;

/// Quadratic tempo-deviation penalty weight in the DP (envelope is
/// max-normalized, so 1.0 trades one full-strength onset per grid period).
const DP_PENALTY: f64 = 1.0;

/// Beat positions (0/1 per frame) and the estimated tempo. Silence yields an
/// all-zero vector and no tempo. Needs at least two seconds of envelope.
pub fn track_beats(envelope: &[f64], fps: u32) -> Result<(Vec<f64>, Option<f64>)> {
    let t = envelope.len();
    if t < 2 * fps as usize {
        return Err(Error::InputTooShort(format!("{t} frames < {} (2 s at {fps} FPS)", 2 * fps)));
    }
    if envelope.iter().cloned().fold(0.0f64, f64::max) <= 0.0 {
        return Ok((vec![0.0; t], None));
    }

    // Dominant tempo from autocorrelation over the 40..200 BPM lag range.
    let lag_min = (60.0 * fps as f64 / BPM_MAX).ceil() as usize;
    let lag_max = ((60.0 * fps as f64 / BPM_MIN).floor() as usize).min(t - 1);
    let mut best_lag = lag_min;
    let mut best_r = f64::MIN;
    for lag in lag_min..=lag_max {
        let mut r = 0.0;
        for i in 0..t - lag {
            r += envelope[i] * envelope[i + lag];
        }
        if r > best_r {
            best_r = r;
            best_lag = lag;
        }
    }
    let period = best_lag as f64;
    let bpm = 60.0 * fps as f64 / period;

    // DP over frames: each beat extends a predecessor roughly one period back.
    let lo = (0.5 * period).floor() as usize;
    let hi = (1.5 * period).ceil() as usize;
    let mut score = envelope.to_vec();
    let mut prev: Vec<isize> = vec![-1; t];
    for i in 0..t {
        let from = i.saturating_sub(hi);
        let to = i.saturating_sub(lo);
        let mut best = f64::MIN;
        let mut best_j = -1isize;
        if i >= lo {
            for j in from..=to {
                let dev = (i - j) as f64 - period;
                let cand = score[j] - DP_PENALTY * (dev / period) * (dev / period);
                if cand > best {
                    best = cand;
                    best_j = j as isize;
                }
            }
        }
        if best_j >= 0 && best > 0.0 {
            score[i] += best;
            prev[i] = best_j;
        }
    }

    // Backtrack from the best tail frame.
    let tail_start = t.saturating_sub(best_lag.max(1));
    let mut end = tail_start;
    for i in tail_start..t {
        if score[i] > score[end] {
            end = i;
        }
    }
    let mut beats = vec![0.0; t];
    let mut cur = end as isize;
    while cur >= 0 {
        beats[cur as usize] = 1.0;
        cur = prev[cur as usize];
    }
    Ok((beats, Some(bpm)))
}
