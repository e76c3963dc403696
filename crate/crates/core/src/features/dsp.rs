use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{AudioClip, FeatureConfig, FeatureSequence};
use crate::error::{LidError, Result};
use crate::tensor::Tensor;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Symmetric Hann window, `w[n] = 0.5·(1 − cos(2πn/(len−1)))`.
pub fn hann_window(len: usize) -> Vec<f32> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| (0.5 * (1.0 - (2.0 * PI * n as f64 / denom).cos())) as f32)
        .collect()
}

/// `1 + floor((n − window) / hop)`, or `None` when the signal is shorter
/// than one window.
pub fn frame_count(num_samples: usize, window: usize, hop: usize) -> Option<usize> {
    (num_samples >= window).then(|| 1 + (num_samples - window) / hop)
}

/// Pre-emphasis followed by overlapping Hann-windowed frames, `[T, window]`.
pub fn frame_signal(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Tensor> {
    cfg.validate()?;
    let x = &clip.samples;
    let t = frame_count(x.len(), cfg.window, cfg.hop).ok_or(LidError::TooShort {
        samples: x.len(),
        window: cfg.window,
    })?;
    let mut emphasized = Vec::with_capacity(x.len());
    emphasized.push(x[0]);
    emphasized.extend(x.windows(2).map(|w| w[1] - cfg.pre_emphasis * w[0]));

    let win = hann_window(cfg.window);
    let mut out = Vec::with_capacity(t * cfg.window);
    for f in 0..t {
        let start = f * cfg.hop;
        out.extend(
            emphasized[start..start + cfg.window]
                .iter()
                .zip(&win)
                .map(|(&s, &w)| s * w),
        );
    }
    Tensor::new(vec![t, cfg.window], out)
}

/// `|X[k]|²` for `k = 0..=fft_size/2` of each zero-padded frame.
pub fn power_spectrum(frames: &Tensor, fft_size: usize) -> Result<Tensor> {
    if !fft_size.is_power_of_two() {
        return Err(LidError::Config(format!("fft_size {fft_size} is not a power of two")));
    }
    let len = frames.cols();
    if len > fft_size {
        return Err(LidError::Config(format!("frame length {len} exceeds fft_size {fft_size}")));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let bins = fft_size / 2 + 1;
    let mut out = Vec::with_capacity(frames.rows() * bins);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for r in 0..frames.rows() {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (b, &v) in buf.iter_mut().zip(frames.row(r)) {
            b.re = v as f64;
        }
        fft.process(&mut buf);
        out.extend(buf[..bins].iter().map(|c| c.norm_sqr() as f32));
    }
    Tensor::new(vec![frames.rows(), bins], out)
}

/// Center frequencies (Hz) of the `n_mels` filters, evenly spaced in mel
/// between `f_min` and `f_max` (the band edges are not centers).
pub fn mel_center_frequencies(cfg: &FeatureConfig) -> Vec<f64> {
    mel_points(cfg)[1..=cfg.n_mels].to_vec()
}

fn mel_points(cfg: &FeatureConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let step = (hi - lo) / (cfg.n_mels + 1) as f64;
    (0..cfg.n_mels + 2).map(|i| mel_to_hz(lo + step * i as f64)).collect()
}

/// Triangular mel filters over FFT bins, `[n_mels, fft_size/2 + 1]`.
///
/// Edge and center frequencies snap to the nearest bin; filter `m` rises from
/// 0 at its left edge to exactly 1 at its center bin and falls back to 0 at
/// its right edge.
pub fn build_mel_filterbank(cfg: &FeatureConfig) -> Result<Tensor> {
    cfg.validate()?;
    let bins = cfg.fft_size / 2 + 1;
    let bin_of = |hz: f64| {
        ((hz * cfg.fft_size as f64 / cfg.sample_rate as f64).round() as usize).min(bins - 1)
    };
    let edges: Vec<usize> = mel_points(cfg).into_iter().map(bin_of).collect();
    let mut fb = vec![0f32; cfg.n_mels * bins];
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        if !(left < center && center < right) {
            return Err(LidError::Config(format!(
                "mel filter {m} has no support (bins {left}/{center}/{right}); \
                 too many mel bands for fft_size {}",
                cfg.fft_size
            )));
        }
        let row = &mut fb[m * bins..(m + 1) * bins];
        for k in left..=center {
            row[k] = ((k - left) as f64 / (center - left) as f64) as f32;
        }
        for k in center..=right {
            row[k] = ((right - k) as f64 / (right - center) as f64) as f32;
        }
    }
    Tensor::new(vec![cfg.n_mels, bins], fb)
}

/// Log mel-filterbank energies, `ln(max(fb · |X|², floor))`, one row per frame.
pub fn compute_mfsc(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureSequence> {
    let frames = frame_signal(clip, cfg)?;
    let power = power_spectrum(&frames, cfg.fft_size)?;
    let fb = build_mel_filterbank(cfg)?;
    let bins = fb.cols();
    let floor = cfg.log_floor;
    let mut out = Vec::with_capacity(power.rows() * cfg.n_mels);
    for r in 0..power.rows() {
        let spec = power.row(r);
        for m in 0..cfg.n_mels {
            let energy: f64 = fb.data()[m * bins..(m + 1) * bins]
                .iter()
                .zip(spec)
                .map(|(&w, &p)| w as f64 * p as f64)
                .sum();
            out.push(energy.max(floor).ln() as f32);
        }
    }
    let mut features = FeatureSequence::new(Tensor::new(vec![power.rows(), cfg.n_mels], out)?)?;
    if cfg.normalize {
        standardize(&mut features);
    }
    Ok(features)
}

/// Per-utterance standardization of each coefficient to zero mean and unit
/// variance. Constant coefficients become 0.
pub fn standardize(features: &mut FeatureSequence) {
    let (t, d) = (features.num_frames(), features.dim());
    let data = features.frames.data_mut();
    for c in 0..d {
        let mean = (0..t).map(|i| data[i * d + c] as f64).sum::<f64>() / t as f64;
        let var = (0..t).map(|i| (data[i * d + c] as f64 - mean).powi(2)).sum::<f64>() / t as f64;
        let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
        for i in 0..t {
            data[i * d + c] = ((data[i * d + c] as f64 - mean) * scale) as f32;
        }
    }
}

fn dct_basis(n: usize) -> Vec<f64> {
    // Orthonormal DCT-II matrix, row k, column i.
    let mut basis = vec![0.0; n * n];
    for k in 0..n {
        let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            basis[k * n + i] = s * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos();
        }
    }
    basis
}

/// Orthonormal DCT-II along each frame, keeping the first `n_coeffs`.
pub fn dct_mfcc(features: &FeatureSequence, n_coeffs: usize) -> Result<FeatureSequence> {
    let (t, d) = (features.num_frames(), features.dim());
    if n_coeffs == 0 || n_coeffs > d {
        return Err(LidError::Config(format!("n_coeffs {n_coeffs} must be in 1..={d}")));
    }
    let basis = dct_basis(d);
    let mut out = Vec::with_capacity(t * n_coeffs);
    for r in 0..t {
        let row = features.frames.row(r);
        for k in 0..n_coeffs {
            let v: f64 = basis[k * d..(k + 1) * d]
                .iter()
                .zip(row)
                .map(|(&b, &x)| b * x as f64)
                .sum();
            out.push(v as f32);
        }
    }
    Ok(FeatureSequence {
        frames: Tensor::new(vec![t, n_coeffs], out)?,
        valid: features.valid.clone(),
    })
}

/// Inverse of a full-length [`dct_mfcc`] (orthonormal DCT-III).
pub fn idct_rows(coeffs: &FeatureSequence) -> Result<FeatureSequence> {
    let (t, d) = (coeffs.num_frames(), coeffs.dim());
    let basis = dct_basis(d);
    let mut out = Vec::with_capacity(t * d);
    for r in 0..t {
        let row = coeffs.frames.row(r);
        for i in 0..d {
            let v: f64 = (0..d).map(|k| basis[k * d + i] * row[k] as f64).sum();
            out.push(v as f32);
        }
    }
    Ok(FeatureSequence {
        frames: Tensor::new(vec![t, d], out)?,
        valid: coeffs.valid.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn clip(samples: Vec<f32>) -> AudioClip {
        AudioClip::new(samples, 16000)
    }

    /// Direct O(N²) DFT, independent of the FFT path.
    fn naive_power(frame: &[f64], n: usize) -> Vec<f64> {
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &x) in frame.iter().enumerate() {
                    let a = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn one_second_gives_98_frames() {
        let cfg = FeatureConfig::default();
        let frames = frame_signal(&clip(vec![0.1; 16000]), &cfg).unwrap();
        // 1 + floor((16000 - 400) / 160) = 1 + 97
        assert_eq!(frames.shape(), &[98, 400]);
    }

    #[test]
    fn too_short_clip() {
        let cfg = FeatureConfig::default();
        let err = frame_signal(&clip(vec![0.0; 399]), &cfg).unwrap_err();
        assert!(matches!(err, LidError::TooShort { samples: 399, window: 400 }));
    }

    #[test]
    fn hann_peaks_at_center() {
        let w = hann_window(401);
        assert_abs_diff_eq!(w[200], 1.0, epsilon = 1e-7);
        assert_eq!(w[0], 0.0);
        let w = hann_window(400);
        assert!(w.iter().all(|&v| v <= 1.0));
    }

    #[test]
    fn zero_clip_gives_zero_frames() {
        let frames = frame_signal(&clip(vec![0.0; 1000]), &FeatureConfig::default()).unwrap();
        assert!(frames.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pre_emphasis_applied_before_windowing() {
        let cfg = FeatureConfig {
            window: 4,
            hop: 4,
            fft_size: 4,
            n_mels: 1,
            f_max: 8000.0,
            ..FeatureConfig::default()
        };
        let frames = frame_signal(&clip(vec![1.0, 1.0, 1.0, 1.0]), &cfg).unwrap();
        let w = hann_window(4);
        let expect = [1.0 * w[0], 0.03 * w[1], 0.03 * w[2], 0.03 * w[3]];
        for (a, b) in frames.data().iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn bin_aligned_cosine_concentrates() {
        let n = 512;
        let k0 = 37;
        let frame: Vec<f32> = (0..n)
            .map(|i| (2.0 * PI * (k0 * i) as f64 / n as f64).cos() as f32)
            .collect();
        let p = power_spectrum(&Tensor::new(vec![1, n], frame).unwrap(), n).unwrap();
        for (k, &v) in p.data().iter().enumerate() {
            if k == k0 {
                // |X[k0]| = N/2
                assert_abs_diff_eq!(v as f64, (n as f64 / 2.0).powi(2), epsilon = 1e-2);
            } else {
                assert!((v as f64) < 1e-9, "bin {k}: {v}");
            }
        }
    }

    #[test]
    fn zero_and_impulse_spectra() {
        let p = power_spectrum(&Tensor::zeros(&[2, 400]), 512).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.0));
        let mut imp = vec![0.0f32; 400];
        imp[0] = 1.0;
        let p = power_spectrum(&Tensor::new(vec![1, 400], imp).unwrap(), 512).unwrap();
        assert_eq!(p.shape(), &[1, 257]);
        assert!(p.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(matches!(power_spectrum(&Tensor::zeros(&[1, 4]), 400), Err(LidError::Config(_))));
    }

    proptest! {
        #[test]
        fn fft_matches_direct_dft(vals in proptest::collection::vec(-1.0f32..1.0, 48)) {
            let p = power_spectrum(&Tensor::new(vec![1, 48], vals.clone()).unwrap(), 64).unwrap();
            let frame: Vec<f64> = vals.iter().map(|&v| v as f64).collect();
            let oracle = naive_power(&frame, 64);
            for (&a, &b) in p.data().iter().zip(&oracle) {
                prop_assert!((a as f64 - b).abs() <= 1e-4 * (1.0 + b));
            }
        }
    }

    #[test]
    fn mel_scale_points() {
        // 2595 · log10(2)
        assert_abs_diff_eq!(hz_to_mel(700.0), 781.17, epsilon = 0.01);
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert_abs_diff_eq!(mel_to_hz(hz_to_mel(1234.5)), 1234.5, epsilon = 1e-9);
    }

    #[test]
    fn filterbank_shape_and_peaks() {
        let cfg = FeatureConfig::default();
        let fb = build_mel_filterbank(&cfg).unwrap();
        assert_eq!(fb.shape(), &[40, 257]);
        let centers = mel_center_frequencies(&cfg);
        assert_eq!(centers.len(), 40);
        assert!(centers.windows(2).all(|w| w[0] < w[1]));
        for m in 0..40 {
            let row = fb.row(m);
            assert!(row.iter().all(|&w| w >= 0.0));
            let peaks = row.iter().filter(|&&w| w == 1.0).count();
            assert_eq!(peaks, 1, "filter {m}");
            let argmax = row.iter().position(|&w| w == 1.0).unwrap();
            let bin_hz = argmax as f64 * 16000.0 / 512.0;
            assert!((bin_hz - centers[m]).abs() <= 16000.0 / 1024.0 + 1e-9);
        }
    }

    #[test]
    fn too_many_mels_is_config_error() {
        let cfg = FeatureConfig {
            n_mels: 200,
            ..FeatureConfig::default()
        };
        assert!(matches!(build_mel_filterbank(&cfg), Err(LidError::Config(_))));
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = FeatureConfig::default();
        let f = compute_mfsc(&clip(vec![0.0; 16000]), &cfg).unwrap();
        assert_eq!(f.frames.shape(), &[98, 40]);
        assert!(f.valid.iter().all(|&v| v));
        let floor = (1e-10f64).ln() as f32;
        assert!(f.frames.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn doubling_amplitude_never_lowers_energy() {
        let cfg = FeatureConfig::default();
        let base: Vec<f32> = (0..4000)
            .map(|i| 0.2 * ((i as f32) * 0.031).sin() + 0.05 * ((i * 7919 % 101) as f32 / 101.0 - 0.5))
            .collect();
        let loud: Vec<f32> = base.iter().map(|&v| 2.0 * v).collect();
        let a = compute_mfsc(&clip(base), &cfg).unwrap();
        let b = compute_mfsc(&clip(loud), &cfg).unwrap();
        for (&x, &y) in a.frames.data().iter().zip(b.frames.data()) {
            assert!(y >= x);
        }
    }

    #[test]
    fn mfsc_is_deterministic_and_finite() {
        let cfg = FeatureConfig::default();
        let sig: Vec<f32> = (0..3000).map(|i| ((i * i) % 97) as f32 / 97.0 - 0.5).collect();
        let a = compute_mfsc(&clip(sig.clone()), &cfg).unwrap();
        let b = compute_mfsc(&clip(sig), &cfg).unwrap();
        assert!(a.frames.all_finite());
        let bits = |f: &FeatureSequence| f.frames.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn standardize_option() {
        let cfg = FeatureConfig {
            normalize: true,
            ..FeatureConfig::default()
        };
        let f = compute_mfsc(&clip(vec![0.0; 16000]), &cfg).unwrap();
        assert!(f.frames.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dct_of_constant_row() {
        let c = 1.7f32;
        let fs = FeatureSequence::new(Tensor::full(&[2, 40], c)).unwrap();
        let m = dct_mfcc(&fs, 13).unwrap();
        assert_eq!(m.frames.shape(), &[2, 13]);
        assert_abs_diff_eq!(m.frames.at(&[0, 0]), c * 40f32.sqrt(), epsilon = 1e-5);
        for k in 1..13 {
            assert_abs_diff_eq!(m.frames.at(&[1, k]), 0.0, epsilon = 1e-5);
        }
        let z = dct_mfcc(&FeatureSequence::new(Tensor::zeros(&[1, 40])).unwrap(), 40).unwrap();
        assert!(z.frames.data().iter().all(|&v| v == 0.0));
        assert!(dct_mfcc(&fs, 41).is_err());
        assert!(dct_mfcc(&fs, 0).is_err());
    }

    proptest! {
        #[test]
        fn dct_round_trips(vals in proptest::collection::vec(-30.0f32..10.0, 80)) {
            let fs = FeatureSequence::new(Tensor::new(vec![2, 40], vals).unwrap()).unwrap();
            let back = idct_rows(&dct_mfcc(&fs, 40).unwrap()).unwrap();
            prop_assert!(back.frames.max_abs_diff(&fs.frames) < 1e-4);
        }

        #[test]
        fn frame_count_formula(n in 400usize..20000) {
            let cfg = FeatureConfig::default();
            let frames = frame_signal(&clip(vec![0.0; n]), &cfg).unwrap();
            prop_assert_eq!(frames.shape()[0], 1 + (n - 400) / 160);
        }
    }
}
