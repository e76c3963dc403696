//! Generated audio for smoke tests and demos: each class is a cluster of
//! tones inside its own frequency band, plus white noise.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::features::{AudioClip, SAMPLE_RATE};

#[derive(Debug, Clone, PartialEq)]
pub struct ToneSetConfig {
    pub num_classes: usize,
    pub clips_per_class: usize,
    pub duration_secs: f64,
    /// Lower edge of class 0's band, Hz.
    pub base_hz: f64,
    /// Width of each class band; bands are separated by the same gap.
    pub band_hz: f64,
    pub tones: usize,
    pub amplitude: f64,
    pub noise_std: f64,
}

impl Default for ToneSetConfig {
    fn default() -> Self {
        ToneSetConfig {
            num_classes: 4,
            clips_per_class: 50,
            duration_secs: 1.0,
            base_hz: 300.0,
            band_hz: 400.0,
            tones: 3,
            amplitude: 0.25,
            noise_std: 0.02,
        }
    }
}

impl ToneSetConfig {
    pub fn band(&self, class: usize) -> (f64, f64) {
        let lo = self.base_hz + 2.0 * self.band_hz * class as f64;
        (lo, lo + self.band_hz)
    }
}

/// One clip of class `class`; the same `(class, seed)` always gives the same
/// samples.
pub fn tone_clip(cfg: &ToneSetConfig, class: usize, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((class as u64) << 48));
    let (lo, hi) = cfg.band(class);
    let tones: Vec<(f64, f64, f64)> = (0..cfg.tones)
        .map(|_| (rng.gen_range(lo..hi), rng.gen_range(0.0..TAU), rng.gen_range(0.5..1.0)))
        .collect();
    let norm: f64 = tones.iter().map(|t| t.2).sum();
    let noise = Normal::new(0.0, cfg.noise_std).expect("finite noise level");
    let n = (cfg.duration_secs * SAMPLE_RATE as f64).round() as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let tone: f64 = tones.iter().map(|&(f, ph, a)| a * (TAU * f * t + ph).sin()).sum();
            (cfg.amplitude * tone / norm + noise.sample(&mut rng)).clamp(-1.0, 1.0) as f32
        })
        .collect();
    AudioClip::new(samples, SAMPLE_RATE)
}

/// `clips_per_class` clips of every class, interleaved by class.
pub fn tone_dataset(cfg: &ToneSetConfig, seed: u64) -> Vec<(AudioClip, usize)> {
    (0..cfg.clips_per_class)
        .flat_map(|i| (0..cfg.num_classes).map(move |c| (c, i)))
        .map(|(c, i)| (tone_clip(cfg, c, seed.wrapping_mul(1_000_003).wrapping_add(i as u64)), c))
        .collect()
}
