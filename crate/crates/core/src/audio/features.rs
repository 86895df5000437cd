use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Axis};
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AudioBuffer, SAMPLE_RATE};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("window_ms ({window_ms}) must exceed hop_ms ({hop_ms}) and hop_ms must be positive")]
    WindowHop { window_ms: f64, hop_ms: f64 },
    #[error("n_mels must be at least 1")]
    NoMels,
    #[error("invalid mel range {fmin}..{fmax} Hz (fmax must not exceed {nyquist} Hz)")]
    MelRange { fmin: f64, fmax: f64, nyquist: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { window_ms: 25.0, hop_ms: 10.0, n_mels: 40, fmin: 0.0, fmax: 8000.0, log_floor: 1e-10 }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if !(self.hop_ms > 0.0 && self.window_ms > self.hop_ms) {
            return Err(FeatureError::WindowHop { window_ms: self.window_ms, hop_ms: self.hop_ms });
        }
        if self.n_mels == 0 {
            return Err(FeatureError::NoMels);
        }
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(FeatureError::MelRange { fmin: self.fmin, fmax: self.fmax, nyquist });
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window_ms * SAMPLE_RATE as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * SAMPLE_RATE as f64 / 1000.0).round() as usize
    }

    /// Feature value of a frame with zero energy.
    pub fn floor_value(&self) -> f32 {
        self.log_floor.ln() as f32
    }

    /// Number of frames produced for `num_samples` input samples.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        let window = self.window_samples();
        if num_samples < window {
            0
        } else {
            (num_samples - window) / self.hop_samples() + 1
        }
    }

    /// Number of samples spanned by `frames` consecutive frames.
    pub fn span_samples(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop_samples() + self.window_samples()
        }
    }
}

/// `T x n_mels` log-mel energies at a fixed hop.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Array2<f32>,
    hop_ms: f64,
}

impl FeatureSequence {
    pub fn new(frames: Array2<f32>, hop_ms: f64) -> Self {
        Self { frames, hop_ms }
    }

    pub fn frames(&self) -> ArrayView2<'_, f32> {
        self.frames.view()
    }

    pub fn into_frames(self) -> Array2<f32> {
        self.frames
    }

    pub fn hop_ms(&self) -> f64 {
        self.hop_ms
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn n_mels(&self) -> usize {
        self.frames.ncols()
    }

    /// Frames `[start, end)` as a new sequence.
    pub fn slice(&self, start: usize, end: usize) -> FeatureSequence {
        FeatureSequence::new(self.frames.slice(s![start..end, ..]).to_owned(), self.hop_ms)
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Reusable log-mel extractor holding the window, filterbank and FFT plan.
#[derive(Clone)]
pub struct MelExtractor {
    config: FeatureConfig,
    window: Vec<f64>,
    fft_size: usize,
    fft: Arc<dyn Fft<f64>>,
    /// `n_mels x (fft_size/2 + 1)` triangular weights.
    filterbank: Array2<f64>,
}

impl std::fmt::Debug for MelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelExtractor").field("config", &self.config).field("fft_size", &self.fft_size).finish()
    }
}

impl MelExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self, FeatureError> {
        config.validate()?;
        let n = config.window_samples();
        // periodic Hann
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let fft_size = n.next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        let n_bins = fft_size / 2 + 1;

        let mel_lo = hz_to_mel(config.fmin);
        let mel_hi = hz_to_mel(config.fmax);
        let edges: Vec<f64> = (0..config.n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (config.n_mels + 1) as f64))
            .collect();
        let mut filterbank = Array2::zeros((config.n_mels, n_bins));
        for m in 0..config.n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * SAMPLE_RATE as f64 / fft_size as f64;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                filterbank[[m, k]] = w;
            }
        }
        Ok(Self { config, window, fft_size, fft, filterbank })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    /// Pre-log mel energies of one frame of `window_samples()` samples.
    pub fn frame_energies(&self, frame: &[i16]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); self.fft_size];
        for (i, (&s, &w)) in frame.iter().zip(&self.window).enumerate() {
            buf[i].re = s as f64 / 32768.0 * w;
        }
        self.fft.process(&mut buf);
        let power: Vec<f64> = buf[..self.fft_size / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        self.filterbank
            .axis_iter(Axis(0))
            .map(|row| row.iter().zip(&power).map(|(w, p)| w * p).sum())
            .collect()
    }

    pub fn extract(&self, samples: &[i16]) -> FeatureSequence {
        let window = self.config.window_samples();
        let hop = self.config.hop_samples();
        let t = self.config.num_frames(samples.len());
        let mut frames = Array2::zeros((t, self.config.n_mels));
        for (i, mut row) in frames.axis_iter_mut(Axis(0)).enumerate() {
            let start = i * hop;
            let energies = self.frame_energies(&samples[start..start + window]);
            for (dst, e) in row.iter_mut().zip(energies) {
                *dst = (e + self.config.log_floor).ln() as f32;
            }
        }
        FeatureSequence::new(frames, self.config.hop_ms)
    }
}

pub fn extract_features(buffer: &AudioBuffer, config: &FeatureConfig) -> Result<FeatureSequence, FeatureError> {
    Ok(MelExtractor::new(config.clone())?.extract(buffer.samples()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{synth_utterance, TerminalContour, UtteranceSpec};

    fn speech(seconds: f64) -> AudioBuffer {
        synth_utterance(&UtteranceSpec {
            duration_s: seconds,
            base_f0: 140.0,
            terminal_contour: TerminalContour::Falling,
            amplitude: 0.4,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn zero_signal_hits_log_floor() {
        let feats = extract_features(&AudioBuffer::silence(16_000), &FeatureConfig::default()).unwrap();
        let floor = (1e-10f64).ln();
        assert!((floor + 23.0259).abs() < 1e-4);
        assert!(feats.frames().iter().all(|&v| (v as f64 - floor).abs() < 1e-5));
    }

    #[test]
    fn one_second_gives_98_frames() {
        let feats = extract_features(&AudioBuffer::silence(16_000), &FeatureConfig::default()).unwrap();
        assert_eq!(feats.len(), 98);
        assert_eq!(feats.n_mels(), 40);
    }

    #[test]
    fn short_buffer_gives_empty_sequence() {
        let feats = extract_features(&AudioBuffer::silence(399), &FeatureConfig::default()).unwrap();
        assert!(feats.is_empty());
        let feats = extract_features(&AudioBuffer::silence(400), &FeatureConfig::default()).unwrap();
        assert_eq!(feats.len(), 1);
    }

    #[test]
    fn doubling_amplitude_scales_energy_by_four() {
        let base: Vec<i16> = speech(0.5).samples().iter().map(|&s| s / 2).collect();
        let doubled: Vec<i16> = base.iter().map(|&s| s * 2).collect();
        let ex = MelExtractor::new(FeatureConfig::default()).unwrap();
        let window = ex.config().window_samples();
        for start in (0..base.len() - window).step_by(800) {
            let a = ex.frame_energies(&base[start..start + window]);
            let b = ex.frame_energies(&doubled[start..start + window]);
            for (x, y) in a.iter().zip(&b) {
                if *x > 1e-6 {
                    assert!(((y / x).ln() - 4f64.ln()).abs() < 1e-6, "{x} {y}");
                }
            }
        }
    }

    #[test]
    fn prepending_one_hop_shifts_frames() {
        let buf = speech(0.6);
        let mut shifted = vec![0i16; 160];
        shifted.extend_from_slice(buf.samples());
        let cfg = FeatureConfig::default();
        let a = extract_features(&buf, &cfg).unwrap();
        let b = extract_features(&AudioBuffer::new(shifted), &cfg).unwrap();
        assert_eq!(b.len(), a.len() + 1);
        for i in 0..a.len() {
            for m in 0..40 {
                assert!((a.frames()[[i, m]] - b.frames()[[i + 1, m]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn speech_sits_above_floor() {
        let cfg = FeatureConfig::default();
        let feats = extract_features(&speech(1.0), &cfg).unwrap();
        for row in feats.frames().axis_iter(Axis(0)) {
            assert!(row.mean().unwrap() > cfg.floor_value());
        }
    }

    #[test]
    fn deterministic() {
        let cfg = FeatureConfig::default();
        let buf = speech(0.7);
        assert_eq!(extract_features(&buf, &cfg).unwrap(), extract_features(&buf, &cfg).unwrap());
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = FeatureConfig { window_ms: 10.0, hop_ms: 10.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(FeatureError::WindowHop { .. })));
        let bad = FeatureConfig { n_mels: 0, ..Default::default() };
        assert_eq!(bad.validate(), Err(FeatureError::NoMels));
        let bad = FeatureConfig { fmax: 9000.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(FeatureError::MelRange { .. })));
    }

    #[test]
    fn fft_matches_naive_dft() {
        let ex = MelExtractor::new(FeatureConfig::default()).unwrap();
        let buf = speech(0.5);
        let frame = &buf.samples()[..400];
        let fast = ex.frame_energies(frame);
        // naive O(n^2) DFT oracle
        let n = ex.fft_size;
        let power: Vec<f64> = (0..n / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, (&s, &w)) in frame.iter().zip(&ex.window).enumerate() {
                    let x = s as f64 / 32768.0 * w;
                    let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                re * re + im * im
            })
            .collect();
        for (m, e) in fast.iter().enumerate() {
            let slow: f64 = ex.filterbank.row(m).iter().zip(&power).map(|(w, p)| w * p).sum();
            assert!((e - slow).abs() <= 1e-6 * slow.max(1.0), "{m}: {e} vs {slow}");
        }
    }
}
