//! Short-time Fourier transform with periodic Hann window and reflection
//! padding of (frame_len - hop)/2 on each side, so frame t is centered on
//! the t-th hop interval and the frame count is floor(len / hop).

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::AudioClip;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Spectrogram {
    pub n_frames: usize,
    /// frame_len/2 + 1 one-sided bins.
    pub n_bins: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
    /// Row-major frames x bins.
    data: Vec<Complex64>,
}

impl Spectrogram {
    /// Assemble from raw complex values (row-major frames x bins).
    pub fn from_complex(
        n_frames: usize,
        n_bins: usize,
        frame_len: usize,
        hop: usize,
        sample_rate: u32,
        data: Vec<Complex64>,
    ) -> Self {
        assert_eq!(data.len(), n_frames * n_bins);
        Self { n_frames, n_bins, frame_len, hop, sample_rate, data }
    }

    pub fn at(&self, frame: usize, bin: usize) -> Complex64 {
        self.data[frame * self.n_bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[Complex64] {
        &self.data[frame * self.n_bins..(frame + 1) * self.n_bins]
    }

    pub fn magnitude(&self, frame: usize, bin: usize) -> f64 {
        self.at(frame, bin).norm()
    }

    /// Bin center frequency in Hz.
    pub fn bin_freq(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.frame_len as f64
    }
}

pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())).collect()
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    assert!(pad < n, "reflection pad longer than signal");
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        out.push(x[i]);
    }
    out.extend_from_slice(x);
    for i in 0..pad {
        out.push(x[n - 2 - i]);
    }
    out
}

pub fn stft(clip: &AudioClip, frame_len: usize, hop: usize) -> Result<Spectrogram> {
    if !frame_len.is_power_of_two() {
        return Err(Error::ConfigError(format!("frame_len {frame_len} must be a power of two")));
    }
    if hop == 0 || hop > frame_len {
        return Err(Error::ConfigError(format!("hop {hop} must be in 1..=frame_len")));
    }
    if clip.samples.len() < frame_len {
        return Err(Error::InputTooShort(format!(
            "{} samples < one analysis frame of {frame_len}",
            clip.samples.len()
        )));
    }
    if !clip.samples.iter().all(|s| s.is_finite()) {
        return Err(Error::InvalidAudio("non-finite sample".into()));
    }

    let pad = (frame_len - hop) / 2;
    let padded = reflect_pad(&clip.samples, pad);
    let n_frames = (padded.len() - frame_len) / hop + 1;
    let n_bins = frame_len / 2 + 1;
    let window = hann_window(frame_len);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(frame_len);
    let mut buf = vec![Complex64::default(); frame_len];
    let mut data = Vec::with_capacity(n_frames * n_bins);
    for f in 0..n_frames {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(padded[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..n_bins]);
    }
    Ok(Spectrogram { n_frames, n_bins, frame_len, hop, sample_rate: clip.sample_rate, data })
}
