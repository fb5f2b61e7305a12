//! Mel filterbank energies and MFCCs (log floor + orthonormal DCT-II).

use crate::dsp::stft::Spectrogram;
use crate::dsp::LOG_FLOOR;
use crate::error::{Error, Result};

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank spanning 0..sample_rate/2: n_mels x n_bins.
pub fn mel_filterbank(n_mels: usize, n_bins: usize, frame_len: usize, sample_rate: u32) -> Vec<f64> {
    let f_max = sample_rate as f64 / 2.0;
    let mel_pts: Vec<f64> =
        (0..n_mels + 2).map(|i| mel_to_hz(hz_to_mel(f_max) * i as f64 / (n_mels + 1) as f64)).collect();
    let mut fb = vec![0.0; n_mels * n_bins];
    for m in 0..n_mels {
        let (lo, mid, hi) = (mel_pts[m], mel_pts[m + 1], mel_pts[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / frame_len as f64;
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= mid {
                (f - lo) / (mid - lo)
            } else {
                (hi - f) / (hi - mid)
            };
            fb[m * n_bins + k] = w;
        }
    }
    fb
}

/// Orthonormal DCT-II of a vector, first n_out coefficients.
pub fn dct2_ortho(x: &[f64], n_out: usize) -> Vec<f64> {
    let m = x.len() as f64;
    let mut out = Vec::with_capacity(n_out);
    for k in 0..n_out {
        let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
        let mut acc = 0.0;
        for (i, &v) in x.iter().enumerate() {
            acc += v * (std::f64::consts::PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * m)).cos();
        }
        out.push(scale * acc);
    }
    out
}

/// MFCCs per frame: power spectrum -> mel energies -> floored log -> DCT-II.
/// Returns row-major n_frames x n_mfcc.
pub fn mfcc(spec: &Spectrogram, n_mels: usize, n_mfcc: usize) -> Result<Vec<f64>> {
    if n_mfcc > n_mels {
        return Err(Error::ConfigError(format!("n_mfcc {n_mfcc} > n_mels {n_mels}")));
    }
    let fb = mel_filterbank(n_mels, spec.n_bins, spec.frame_len, spec.sample_rate);
    let mut out = Vec::with_capacity(spec.n_frames * n_mfcc);
    let mut logmel = vec![0.0; n_mels];
    for f in 0..spec.n_frames {
        let frame = spec.frame(f);
        for (m, lm) in logmel.iter_mut().enumerate() {
            let mut e = 0.0;
            for (k, c) in frame.iter().enumerate() {
                e += fb[m * spec.n_bins + k] * c.norm_sqr();
            }
            *lm = e.max(LOG_FLOOR).ln();
        }
        out.extend(dct2_ortho(&logmel, n_mfcc));
    }
    Ok(out)
}
