//! Onset strength (rectified log-magnitude spectral flux) and peak picking.

use crate::dsp::stft::Spectrogram;
use crate::dsp::LOG_FLOOR;

/// Spectral flux: per-frame sum of positive log-magnitude increments across
/// bins; first frame 0; max-normalized to [0,1] when any flux is present.
pub fn onset_envelope(spec: &Spectrogram) -> Vec<f64> {
    let mut env = vec![0.0; spec.n_frames];
    let logmag = |f: usize, k: usize| spec.magnitude(f, k).max(LOG_FLOOR).ln();
    for f in 1..spec.n_frames {
        let mut flux = 0.0;
        for k in 0..spec.n_bins {
            let d = logmag(f, k) - logmag(f - 1, k);
            if d > 0.0 {
                flux += d;
            }
        }
        env[f] = flux;
    }
    let max = env.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for v in env.iter_mut() {
            *v /= max;
        }
    }
    env
}

/// Strict local maxima at or above `threshold * max(envelope)`, thinned
/// greedily by descending height (ties to the earlier frame) so surviving
/// peaks are at least `min_separation` frames apart. Returns a 0/1 vector.
pub fn detect_peaks(envelope: &[f64], min_separation: usize, threshold: f64) -> Vec<f64> {
    let t = envelope.len();
    let mut out = vec![0.0; t];
    if t < 3 {
        return out;
    }
    let max = envelope.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return out;
    }
    let floor = threshold * max;
    let mut candidates: Vec<usize> = (1..t - 1)
        .filter(|&i| {
            envelope[i] > envelope[i - 1] && envelope[i] > envelope[i + 1] && envelope[i] >= floor
        })
        .collect();
    candidates.sort_by(|&a, &b| envelope[b].partial_cmp(&envelope[a]).unwrap().then(a.cmp(&b)));
    let mut accepted: Vec<usize> = Vec::new();
    for i in candidates {
        if accepted.iter().all(|&j| i.abs_diff(j) >= min_separation) {
            accepted.push(i);
        }
    }
    for i in accepted {
        out[i] = 1.0;
    }
    out
}
