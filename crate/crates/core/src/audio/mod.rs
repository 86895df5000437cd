//! Audio carrier type, WAV I/O, log-mel front-end and the pseudo-speech synthesizer.

mod features;
mod synth;
mod wav;

pub use features::{extract_features, FeatureConfig, FeatureError, FeatureSequence, MelExtractor};
pub use synth::{synth_utterance, SynthError, TerminalContour, UtteranceSpec};
pub use wav::{decode_wav, encode_wav, read_wav, resample_linear, write_wav, WavError};

/// Pipeline-internal sample rate in Hz.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono PCM16 samples at [`SAMPLE_RATE`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AudioBuffer {
    samples: Vec<i16>,
}

impl AudioBuffer {
    pub fn new(samples: Vec<i16>) -> Self {
        Self { samples }
    }

    pub fn silence(num_samples: usize) -> Self {
        Self { samples: vec![0; num_samples] }
    }

    pub fn samples(&self) -> &[i16] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<i16> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    pub fn extend_from(&mut self, other: &AudioBuffer) {
        self.samples.extend_from_slice(&other.samples);
    }

    pub fn push_silence(&mut self, num_samples: usize) {
        self.samples.resize(self.samples.len() + num_samples, 0);
    }

    pub fn truncate(&mut self, num_samples: usize) {
        self.samples.truncate(num_samples);
    }

    /// Root-mean-square amplitude over `range`, as a fraction of full scale.
    pub fn rms(&self, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.samples[range];
        if slice.is_empty() {
            return 0.0;
        }
        let sum: f64 = slice
            .iter()
            .map(|&s| {
                let v = s as f64 / 32768.0;
                v * v
            })
            .sum();
        (sum / slice.len() as f64).sqrt()
    }

    /// Converts seconds to a sample index, rounding to the nearest sample.
    pub fn index_of(seconds: f64) -> usize {
        (seconds * SAMPLE_RATE as f64).round().max(0.0) as usize
    }
}
