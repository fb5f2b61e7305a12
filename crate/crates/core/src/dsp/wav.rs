//! WAV decoding from in-memory bytes (PCM16 or float32; multi-channel input
//! is downmixed to mono by averaging). File I/O stays in the CLI layer.

use std::io::Cursor;

use crate::dsp::AudioClip;
use crate::error::{Error, Result};

pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    let reader = hound::WavReader::new(Cursor::new(bytes))
        .map_err(|e| Error::FormatError(format!("bad WAV: {e}")))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::FormatError("WAV reports zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::FormatError(format!("WAV read: {e}")))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::FormatError(format!("WAV read: {e}")))?,
        (fmt, bits) => {
            return Err(Error::InvalidAudio(format!("unsupported WAV format {fmt:?}/{bits} bit")))
        }
    };
    let n = interleaved.len() / channels;
    let mut mono = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = 0.0;
        for c in 0..channels {
            acc += interleaved[i * channels + c];
        }
        mono.push(acc / channels as f64);
    }
    AudioClip::new(mono, spec.sample_rate)
}

/// PCM16 mono WAV bytes from samples in [-1, 1]; used by fixtures and demos.
pub fn encode_wav_pcm16(samples: &[f64], sample_rate: u32) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec)
            .map_err(|e| Error::FormatError(format!("WAV write: {e}")))?;
        for &s in samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer.write_sample(v).map_err(|e| Error::FormatError(format!("WAV write: {e}")))?;
        }
        writer.finalize().map_err(|e| Error::FormatError(format!("WAV write: {e}")))?;
    }
    Ok(cursor.into_inner())
}
