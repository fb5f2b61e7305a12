//! Pitch-class energy folding (A440 equal temperament, C = class 0).

use crate::dsp::stft::Spectrogram;
use crate::dsp::LOG_FLOOR;

/// Chroma index of pitch class A.
pub const CLASS_A: usize = 9;

/// Nearest pitch class of a frequency, C-based indexing.
pub fn pitch_class(freq: f64) -> usize {
    let semis = 12.0 * (freq / 440.0).log2();
    let cls = (semis.round() as i64).rem_euclid(12) as usize;
    (cls + CLASS_A) % 12
}

/// Spectral power folded into 12 pitch classes, per-frame L2-normalized when
/// the frame has energy, else a zero row. Returns n_frames x 12 row-major.
pub fn chroma(spec: &Spectrogram) -> Vec<f64> {
    let mut out = vec![0.0; spec.n_frames * 12];
    for f in 0..spec.n_frames {
        let row = &mut out[f * 12..(f + 1) * 12];
        for k in 1..spec.n_bins {
            let e = spec.at(f, k).norm_sqr();
            row[pitch_class(spec.bin_freq(k))] += e;
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > LOG_FLOOR {
            for v in row.iter_mut() {
                *v /= norm;
            }
        } else {
            row.fill(0.0);
        }
    }
    out
}
