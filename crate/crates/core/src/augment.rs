//! SpecAugment-style frequency and time masking on `[T, D]` features.

use rand::Rng;

use crate::error::{LidError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Largest frequency-mask width, in mel bins.
    pub freq_mask_param: usize,
    pub n_freq_masks: usize,
    /// Largest time-mask width, in frames.
    pub time_mask_param: usize,
    pub n_time_masks: usize,
    pub mask_value: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: false,
            freq_mask_param: 8,
            n_freq_masks: 2,
            time_mask_param: 20,
            n_time_masks: 2,
            mask_value: 0.0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self, n_mels: usize) -> Result<()> {
        if self.freq_mask_param >= n_mels {
            return Err(LidError::Config(format!(
                "augment.freq_mask_param ({}) must be below the number of mel bins ({n_mels})",
                self.freq_mask_param
            )));
        }
        if !self.mask_value.is_finite() {
            return Err(LidError::Config("augment.mask_value must be finite".into()));
        }
        Ok(())
    }
}

fn check_features(features: &Tensor) -> Result<(usize, usize)> {
    match *features.shape() {
        [t, d] => Ok((t, d)),
        _ => Err(LidError::dims("augment", features.shape(), &[0, 0])),
    }
}

/// Sets bins `f0..f0 + width` of every frame to `value`.
pub fn freq_mask(features: &Tensor, f0: usize, width: usize, value: f32) -> Result<Tensor> {
    let (_, d) = check_features(features)?;
    if f0 + width > d {
        return Err(LidError::Contract(format!(
            "frequency mask {f0}..{} exceeds {d} bins",
            f0 + width
        )));
    }
    let mut out = features.clone();
    if width > 0 {
        for row in out.data_mut().chunks_mut(d) {
            row[f0..f0 + width].fill(value);
        }
    }
    Ok(out)
}

/// Sets frames `t0..t0 + width` to `value`.
pub fn time_mask(features: &Tensor, t0: usize, width: usize, value: f32) -> Result<Tensor> {
    let (t, d) = check_features(features)?;
    if t0 + width > t {
        return Err(LidError::Contract(format!(
            "time mask {t0}..{} exceeds {t} frames",
            t0 + width
        )));
    }
    let mut out = features.clone();
    out.data_mut()[t0 * d..(t0 + width) * d].fill(value);
    Ok(out)
}

/// A `(start, width)` draw for one mask on an axis of length `len`: the
/// width is uniform in `[0, param]` (clamped to `len`), the start uniform
/// over the positions where the mask fits.
pub fn draw_span<R: Rng + ?Sized>(param: usize, len: usize, rng: &mut R) -> (usize, usize) {
    let width = rng.gen_range(0..=param).min(len);
    let start = rng.gen_range(0..=len - width);
    (start, width)
}

/// Applies the configured frequency masks, then the time masks. Identity
/// when disabled; the rng is not touched in that case.
pub fn apply_specaugment<R: Rng + ?Sized>(features: &Tensor, cfg: &AugmentConfig, rng: &mut R) -> Result<Tensor> {
    let (t, d) = check_features(features)?;
    if !cfg.enabled {
        return Ok(features.clone());
    }
    let mut out = features.clone();
    for _ in 0..cfg.n_freq_masks {
        let (f0, w) = draw_span(cfg.freq_mask_param, d, rng);
        out = freq_mask(&out, f0, w, cfg.mask_value)?;
    }
    for _ in 0..cfg.n_time_masks {
        let (t0, w) = draw_span(cfg.time_mask_param, t, rng);
        out = time_mask(&out, t0, w, cfg.mask_value)?;
    }
    Ok(out)
}
