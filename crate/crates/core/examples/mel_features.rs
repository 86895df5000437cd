//! Synthesizes one utterance and extracts its log-mel frames.

use etd_core::audio::{extract_features, synth_utterance, FeatureConfig, TerminalContour, UtteranceSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = UtteranceSpec { duration_s: 1.2, base_f0: 140.0, terminal_contour: TerminalContour::Falling, amplitude: 0.5, seed: 1 };
    let audio = synth_utterance(&spec)?;
    let config = FeatureConfig::default();
    let features = extract_features(&audio, &config)?;
    println!("{} samples ({:.2} s) -> {} frames x {} mels", audio.len(), audio.duration_s(), features.len(), features.n_mels());
    let frames = features.frames();
    for t in [0, features.len() / 2, features.len() - 1] {
        let row = frames.row(t);
        let peak = row.iter().cloned().fold(f32::MIN, f32::max);
        println!("frame {t:>3}: max log-mel {peak:7.2}, floor {:.2}", config.floor_value());
    }
    println!("RMS over the utterance: {:.3}", audio.rms(0..audio.len()));
    Ok(())
}
