use rand::Rng;

use super::{DatagenConfig, DatagenError, Variant};
use crate::audio::{synth_utterance, AudioBuffer, TerminalContour, UtteranceSpec, SAMPLE_RATE};
use crate::labels::{SegmentTrack, TurnState};

/// Audio with its ternary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub sample_id: String,
    pub variant: Variant,
    pub audio: AudioBuffer,
    pub track: SegmentTrack,
}

fn seconds(samples: usize) -> f64 {
    samples as f64 / SAMPLE_RATE as f64
}

fn with_contour(spec: &UtteranceSpec, contour: TerminalContour) -> UtteranceSpec {
    UtteranceSpec { terminal_contour: contour, ..spec.clone() }
}

/// Filler token: the head of a level-contour burst at the speaker's pitch.
fn synth_filler(like: &UtteranceSpec, duration_ms: f64) -> Result<AudioBuffer, DatagenError> {
    let duration_s = duration_ms / 1000.0;
    let spec = UtteranceSpec {
        duration_s: duration_s.max(0.3),
        terminal_contour: TerminalContour::Level,
        seed: like.seed ^ 0x00f1_11e7,
        ..like.clone()
    };
    let mut audio = synth_utterance(&spec)?;
    audio.truncate((duration_s * SAMPLE_RATE as f64).round() as usize);
    Ok(audio)
}

/// Assembles one labeled conversation turn from `utterances`.
///
/// Every utterance but the turn-final one gets a level terminal contour; the
/// final one falls. Draws from `rng` in a fixed order: pause position, pause
/// duration, truncation.
pub fn build_conversation(
    sample_id: &str,
    utterances: &[UtteranceSpec],
    config: &DatagenConfig,
    rng: &mut impl Rng,
) -> Result<LabeledSample, DatagenError> {
    config.validate()?;
    if utterances.is_empty() {
        return Err(DatagenError::NoUtterances);
    }
    let n = utterances.len();
    let gap_samples = (config.trailing_gap_s * SAMPLE_RATE as f64).round() as usize;
    let mut audio = AudioBuffer::default();
    let mut pieces: Vec<(TurnState, f64, f64)> = Vec::new();

    let speak = |audio: &mut AudioBuffer, specs: &[UtteranceSpec], final_turn: bool| -> Result<(), DatagenError> {
        for (i, spec) in specs.iter().enumerate() {
            let contour = if final_turn && i + 1 == specs.len() { TerminalContour::Falling } else { TerminalContour::Level };
            audio.extend_from(&synth_utterance(&with_contour(spec, contour))?);
        }
        Ok(())
    };

    match config.variant {
        Variant::Base => {
            speak(&mut audio, utterances, true)?;
            pieces.push((TurnState::SU, 0.0, seconds(audio.len())));
            let start = audio.len();
            audio.push_silence(gap_samples);
            pieces.push((TurnState::Gap, seconds(start), seconds(audio.len())));
        }
        Variant::WithPause | Variant::WithFiller => {
            let position = if n >= 2 { rng.random_range(1..n) } else { 1 };
            let lo = (config.pause_min_s * SAMPLE_RATE as f64).ceil() as usize;
            let hi = (config.pause_max_s * SAMPLE_RATE as f64).floor() as usize;
            let pause_s = rng.random_range(config.pause_min_s..=config.pause_max_s);
            let pause_samples = ((pause_s * SAMPLE_RATE as f64).round() as usize).clamp(lo, hi.max(lo));
            let truncated = n == 1 || rng.random::<f64>() < config.truncate_prob;

            speak(&mut audio, &utterances[..position], false)?;
            if config.variant == Variant::WithFiller {
                audio.extend_from(&synth_filler(&utterances[position - 1], config.filler_duration_ms)?);
            }
            pieces.push((TurnState::SU, 0.0, seconds(audio.len())));
            let pause_start = audio.len();
            audio.push_silence(pause_samples);
            pieces.push((TurnState::Pause, seconds(pause_start), seconds(audio.len())));
            if !truncated {
                let resume = audio.len();
                speak(&mut audio, &utterances[position..], true)?;
                pieces.push((TurnState::SU, seconds(resume), seconds(audio.len())));
                let gap_start = audio.len();
                audio.push_silence(gap_samples);
                pieces.push((TurnState::Gap, seconds(gap_start), seconds(audio.len())));
            }
        }
        Variant::Real => return Err(DatagenError::NotSynthetic(Variant::Real)),
    }

    let track = SegmentTrack::from_pieces(pieces)?;
    Ok(LabeledSample { sample_id: sample_id.to_string(), variant: config.variant, audio, track })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::TurnState::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn utt(duration_s: f64, seed: u64) -> UtteranceSpec {
        UtteranceSpec { duration_s, base_f0: 150.0, terminal_contour: TerminalContour::Level, amplitude: 0.5, seed }
    }

    fn cfg(variant: Variant, truncate_prob: f64) -> DatagenConfig {
        DatagenConfig { variant, truncate_prob, ..Default::default() }
    }

    #[test]
    fn base_appends_one_second_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = build_conversation("x", &[utt(2.0, 1)], &cfg(Variant::Base, 0.5), &mut rng).unwrap();
        assert_eq!(s.track, SegmentTrack::from_pairs(&[(SU, 0.0), (Gap, 2.0)], 3.0).unwrap());
        assert_eq!(s.audio.len(), 48_000);
    }

    #[test]
    fn pause_duration_within_bounds() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = build_conversation("x", &[utt(1.0, 1), utt(1.0, 2)], &cfg(Variant::WithPause, 0.0), &mut rng)
                .unwrap();
            let (_, a, b) = s.track.spans().find(|s| s.0 == Pause).unwrap();
            assert!((1.5..=3.0).contains(&(b - a)), "{}", b - a);
            assert_eq!(s.track.last_state(), Some(Gap));
        }
    }

    #[test]
    fn truncated_sample_ends_in_pause() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = build_conversation("x", &[utt(1.0, 1), utt(1.0, 2)], &cfg(Variant::WithPause, 1.0), &mut rng).unwrap();
        assert_eq!(s.track.last_state(), Some(Pause));
        assert!(!s.track.contains(Gap));
        assert!((s.track.total_duration_s - s.audio.duration_s()).abs() < 1e-12);
    }

    #[test]
    fn single_utterance_pause_is_truncated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = build_conversation("x", &[utt(1.0, 1)], &cfg(Variant::WithPause, 0.0), &mut rng).unwrap();
        assert_eq!(s.track.entries.len(), 2);
        assert_eq!(s.track.last_state(), Some(Pause));
    }

    #[test]
    fn filler_extends_speech_before_pause() {
        let mut rng_a = ChaCha8Rng::seed_from_u64(9);
        let mut rng_b = ChaCha8Rng::seed_from_u64(9);
        let utts = [utt(1.0, 1), utt(1.0, 2)];
        let plain = build_conversation("x", &utts, &cfg(Variant::WithPause, 1.0), &mut rng_a).unwrap();
        let filler = build_conversation("x", &utts, &cfg(Variant::WithFiller, 1.0), &mut rng_b).unwrap();
        let pause_at = |s: &LabeledSample| s.track.entries[1].start_s;
        assert!((pause_at(&filler) - pause_at(&plain) - 0.25).abs() < 1e-9);
    }

    #[test]
    fn empty_utterances_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            build_conversation("x", &[], &cfg(Variant::Base, 0.5), &mut rng),
            Err(DatagenError::NoUtterances)
        ));
    }
}
