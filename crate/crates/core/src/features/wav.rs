use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioClip;
use crate::error::{LidError, Result};

/// Decodes a mono 16-bit PCM WAV file at `expected_rate` Hz.
///
/// Samples are scaled by 1/32768. Files at any other rate are rejected, never
/// resampled.
pub fn read_wav(path: impl AsRef<Path>, expected_rate: u32) -> Result<AudioClip> {
    let path = path.as_ref();
    let decode = |field: &'static str, detail: String| LidError::Decode {
        path: path.to_path_buf(),
        field,
        detail,
    };
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => LidError::io(path, io),
        other => decode("container", other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int {
        return Err(decode("sample format", "expected integer PCM, found float".into()));
    }
    if spec.bits_per_sample != 16 {
        return Err(decode("bits per sample", format!("expected 16, found {}", spec.bits_per_sample)));
    }
    if spec.channels != 1 {
        return Err(decode("channel count", format!("expected 1, found {}", spec.channels)));
    }
    if spec.sample_rate != expected_rate {
        return Err(decode(
            "sample rate",
            format!("expected {expected_rate} Hz, found {} Hz", spec.sample_rate),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| decode("sample data", e.to_string()))?;
    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Writes a clip as mono 16-bit PCM, clamping to the representable range.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => LidError::io(path, io),
        other => LidError::io(path, std::io::Error::other(other.to_string())),
    };
    let mut w = WavWriter::create(path, spec).map_err(to_err)?;
    for &s in &clip.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(to_err)?;
    }
    w.finalize().map_err(to_err)
}
