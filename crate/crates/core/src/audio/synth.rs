//! Deterministic pseudo-speech: a voiced harmonic source with a syllable-rate
//! envelope and a terminal pitch contour that carries the turn-final cue.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AudioBuffer, SAMPLE_RATE};

/// Length of the terminal pitch ramp.
pub const TERMINAL_RAMP_S: f64 = 0.3;
const FALLING_RATIO: f64 = 0.72;
const LEVEL_RATIO: f64 = 1.05;
const SYLLABLE_HZ: f64 = 4.0;
const HARMONIC_GAINS: [f64; 3] = [1.0, 0.5, 0.25];
const FADE_S: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalContour {
    /// Pitch drops at the end: turn-final.
    Falling,
    /// Pitch holds (slightly rises): hesitation.
    Level,
}

impl TerminalContour {
    fn end_ratio(self) -> f64 {
        match self {
            TerminalContour::Falling => FALLING_RATIO,
            TerminalContour::Level => LEVEL_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceSpec {
    pub duration_s: f64,
    pub base_f0: f64,
    pub terminal_contour: TerminalContour,
    /// Peak amplitude as a fraction of full scale.
    pub amplitude: f64,
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("duration {0} s outside [0.3, 30]")]
    Duration(f64),
    #[error("base f0 {0} Hz outside [80, 400]")]
    BaseF0(f64),
    #[error("amplitude {0} outside (0, 1]")]
    Amplitude(f64),
}

impl UtteranceSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.3..=30.0).contains(&self.duration_s) {
            return Err(SynthError::Duration(self.duration_s));
        }
        if !(80.0..=400.0).contains(&self.base_f0) {
            return Err(SynthError::BaseF0(self.base_f0));
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return Err(SynthError::Amplitude(self.amplitude));
        }
        Ok(())
    }
}

/// Renders `spec` to exactly `round(duration_s * 16000)` samples.
pub fn synth_utterance(spec: &UtteranceSpec) -> Result<AudioBuffer, SynthError> {
    spec.validate()?;
    let sr = SAMPLE_RATE as f64;
    let n = (spec.duration_s * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let am_phase: f64 = rng.random::<f64>() * 2.0 * PI;
    let mut phase: f64 = rng.random::<f64>() * 2.0 * PI;

    let ramp_start = spec.duration_s - TERMINAL_RAMP_S.min(spec.duration_s);
    let end_ratio = spec.terminal_contour.end_ratio();

    let mut tonal = Vec::with_capacity(n);
    let mut fades = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let ratio = if t >= ramp_start {
            let frac = (t - ramp_start) / (spec.duration_s - ramp_start);
            1.0 + (end_ratio - 1.0) * frac
        } else {
            1.0
        };
        let f0 = spec.base_f0 * ratio;
        let voiced: f64 = HARMONIC_GAINS
            .iter()
            .enumerate()
            .map(|(h, g)| g * ((h + 1) as f64 * phase).sin())
            .sum();
        phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
        let syllable = 0.75 - 0.25 * (2.0 * PI * SYLLABLE_HZ * t + am_phase).cos();
        let fade = (t / FADE_S).min((spec.duration_s - t) / FADE_S).clamp(0.0, 1.0);
        tonal.push(voiced * syllable * fade);
        fades.push(fade);
    }

    let peak = tonal.iter().fold(0f64, |m, v| m.max(v.abs())).max(f64::EPSILON);
    let full = spec.amplitude * i16::MAX as f64;
    let tonal_gain = 0.9 * full / peak;
    // white noise 40 dB below peak, faded with the voice
    let noise_peak = 0.01 * full;
    let samples = tonal
        .into_iter()
        .zip(fades)
        .map(|(v, fade)| {
            let noise = (rng.random::<f64>() * 2.0 - 1.0) * noise_peak * fade;
            (v * tonal_gain + noise).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
        })
        .collect();
    Ok(AudioBuffer::new(samples))
}
