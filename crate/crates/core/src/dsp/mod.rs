//! Music feature extraction: raw audio in, frame-aligned 35-dim conditioning
//! features out at 30 FPS.
//!
//! Column layout: MFCC 0..19, chroma 20..31, peak 32, beat 33, envelope 34.

pub mod beats;
pub mod chroma;
pub mod mfcc;
pub mod onset;
pub mod stft;
pub mod wav;

pub use stft::{hann_window, stft, Spectrogram};

use crate::error::{Error, Result};

/// Analysis sample rate; divisible by the 30 FPS frame rate.
pub const SAMPLE_RATE: u32 = 24_000;
pub const FPS: u32 = 30;
pub const HOP: usize = (SAMPLE_RATE / FPS) as usize; // 800
pub const FRAME_LEN: usize = 2048;
pub const N_MELS: usize = 40;
pub const N_MFCC: usize = 20;
pub const FEATURE_DIM: usize = 35;
/// Floor applied before every log-energy computation.
pub const LOG_FLOOR: f64 = 1e-10;
/// Peak picker defaults: fraction of the envelope max and frame separation.
pub const PEAK_THRESHOLD: f64 = 0.3;
pub const PEAK_MIN_SEPARATION: usize = 7;

pub const COL_MFCC: std::ops::Range<usize> = 0..20;
pub const COL_CHROMA: std::ops::Range<usize> = 20..32;
pub const COL_PEAK: usize = 32;
pub const COL_BEAT: usize = 33;
pub const COL_ENVELOPE: usize = 34;

/// Mono audio in [-1, 1].
#[derive(Clone, Debug)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::ConfigError("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InputTooShort("empty audio".into()));
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(Error::InvalidAudio("non-finite sample".into()));
        }
        let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
        Ok(Self { samples, sample_rate })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Linear-interpolation resample.
    pub fn resampled(&self, target_rate: u32) -> Self {
        if target_rate == self.sample_rate {
            return self.clone();
        }
        let ratio = self.sample_rate as f64 / target_rate as f64;
        let n_out = (self.samples.len() as f64 / ratio).floor() as usize;
        let mut out = Vec::with_capacity(n_out);
        for i in 0..n_out {
            let pos = i as f64 * ratio;
            let i0 = pos.floor() as usize;
            let frac = pos - i0 as f64;
            let a = self.samples[i0];
            let b = self.samples[(i0 + 1).min(self.samples.len() - 1)];
            out.push(a + (b - a) * frac);
        }
        Self { samples: out, sample_rate: target_rate }
    }
}

/// Frame-aligned conditioning features, row-major T x 35 at 30 FPS.
#[derive(Clone, Debug, PartialEq)]
pub struct MusicFeatureSequence {
    pub frames: Vec<f32>,
    pub n_frames: usize,
    pub fps: u32,
    /// Set when the input audio was internally resampled to 24 kHz.
    pub resampled: bool,
    /// Tempo reported by the beat tracker, absent for silence.
    pub bpm: Option<f64>,
}

impl MusicFeatureSequence {
    pub fn from_frames(frames: Vec<f32>, fps: u32) -> Result<Self> {
        if frames.len() % FEATURE_DIM != 0 || frames.is_empty() {
            return Err(Error::ShapeError(format!("feature buffer length {} not T x 35", frames.len())));
        }
        if !frames.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalError("non-finite feature".into()));
        }
        let n_frames = frames.len() / FEATURE_DIM;
        Ok(Self { frames, n_frames, fps, resampled: false, bpm: None })
    }

    pub fn at(&self, frame: usize, col: usize) -> f32 {
        self.frames[frame * FEATURE_DIM + col]
    }

    pub fn column(&self, col: usize) -> Vec<f32> {
        (0..self.n_frames).map(|t| self.at(t, col)).collect()
    }

    /// Frame indices where a binary column is 1.
    pub fn marked_frames(&self, col: usize) -> Vec<usize> {
        (0..self.n_frames).filter(|&t| self.at(t, col) > 0.5).collect()
    }
}

/// Run the full pipeline: STFT -> MFCC + chroma + onset/peaks/beats, columns
/// assembled in the fixed layout. Audio not at 24 kHz is resampled and
/// flagged. Clips shorter than the beat tracker's 2 s minimum get an all-zero
/// beat column and no tempo.
pub fn extract_music_features(clip: &AudioClip) -> Result<MusicFeatureSequence> {
    let (clip, resampled) = if clip.sample_rate == SAMPLE_RATE {
        (clip.clone(), false)
    } else {
        (clip.resampled(SAMPLE_RATE), true)
    };
    let spec = stft(&clip, FRAME_LEN, HOP)?;
    let t = spec.n_frames;

    let mfcc = mfcc::mfcc(&spec, N_MELS, N_MFCC)?;
    let chroma = chroma::chroma(&spec);
    let envelope = onset::onset_envelope(&spec);
    let peaks = onset::detect_peaks(&envelope, PEAK_MIN_SEPARATION, PEAK_THRESHOLD);
    let (beat_col, bpm) = if t >= 2 * FPS as usize {
        beats::track_beats(&envelope, FPS)?
    } else {
        (vec![0.0; t], None)
    };

    let mut frames = Vec::with_capacity(t * FEATURE_DIM);
    for f in 0..t {
        for c in 0..N_MFCC {
            frames.push(mfcc[f * N_MFCC + c] as f32);
        }
        for c in 0..12 {
            frames.push(chroma[f * 12 + c] as f32);
        }
        frames.push(peaks[f] as f32);
        frames.push(beat_col[f] as f32);
        frames.push(envelope[f] as f32);
    }
    let mut seq = MusicFeatureSequence::from_frames(frames, FPS)?;
    seq.resampled = resampled;
    seq.bpm = bpm;
    Ok(seq)
}
