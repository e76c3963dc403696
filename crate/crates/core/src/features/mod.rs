//! Log-mel (MFSC) front end: WAV decoding, framing, power spectrum, mel
//! filterbank, and the optional DCT to cepstral coefficients.

mod dsp;
mod lidf;
mod wav;

pub use dsp::{
    build_mel_filterbank, compute_mfsc, dct_mfcc, frame_count, frame_signal, hann_window, hz_to_mel,
    idct_rows, mel_center_frequencies, mel_to_hz, power_spectrum, standardize,
};
pub use lidf::{decode_lidf, encode_lidf, read_lidf, write_lidf};
pub use wav::{read_wav, write_wav};

use crate::error::{LidError, Result};
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    /// Mono samples in [-1, 1].
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        AudioClip {
            samples,
            sample_rate,
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// One utterance as `T` frames of `D` coefficients plus a per-frame validity
/// flag (false only for batch padding).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Tensor,
    pub valid: Vec<bool>,
}

impl FeatureSequence {
    pub fn new(frames: Tensor) -> Result<Self> {
        if frames.rank() != 2 {
            return Err(LidError::dims("feature sequence", frames.shape(), &[0, 0]));
        }
        let t = frames.shape()[0];
        Ok(FeatureSequence {
            frames,
            valid: vec![true; t],
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.frames.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    /// Analysis window length in samples.
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
    pub pre_emphasis: f32,
    /// Per-utterance, per-coefficient standardization after the log.
    pub normalize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: SAMPLE_RATE,
            window: 400,
            hop: 160,
            fft_size: 512,
            n_mels: 40,
            f_min: 0.0,
            f_max: 8000.0,
            log_floor: 1e-10,
            pre_emphasis: 0.97,
            normalize: false,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(LidError::Config(msg));
        if self.sample_rate == 0 {
            return fail("features.sample_rate must be positive".into());
        }
        if self.window == 0 || self.window > self.fft_size {
            return fail(format!(
                "features.window ({}) must be in 1..=fft_size ({})",
                self.window, self.fft_size
            ));
        }
        if self.hop == 0 || self.hop > self.window {
            return fail(format!("features.hop ({}) must be in 1..=window ({})", self.hop, self.window));
        }
        if !self.fft_size.is_power_of_two() {
            return fail(format!("features.fft_size ({}) must be a power of two", self.fft_size));
        }
        if self.n_mels == 0 {
            return fail("features.n_mels must be positive".into());
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= self.sample_rate as f64 / 2.0) {
            return fail(format!(
                "need 0 <= f_min ({}) < f_max ({}) <= sample_rate/2",
                self.f_min, self.f_max
            ));
        }
        if !(self.log_floor > 0.0) {
            return fail("features.log_floor must be positive".into());
        }
        Ok(())
    }
}
