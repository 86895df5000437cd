//! Drives the streaming engine step by step on one synthetic conversation.
//!
//! The light classifier is scripted from the reference labels and the heavy
//! verdicts come from an oracle, so the printed events show the control flow
//! without trained models.

use etd_core::audio::FeatureConfig;
use etd_core::cascade::{CascadeConfig, CascadeEngine, Event, OracleProvider, ScriptedClassifier, VerdictProvider};
use etd_core::datagen::{synthesize_sample, DatagenConfig, Variant};
use etd_core::labels::{rasterize, segments_from_frames, STEP_MS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sample = synthesize_sample(&DatagenConfig { variant: Variant::WithPause, seed: 5, ..Default::default() }, 0)?;
    let truth = rasterize(&sample.track, STEP_MS)?;
    let features = FeatureConfig::default();
    let frames_per_step = 10;
    let mut engine = CascadeEngine::new(
        ScriptedClassifier::from_labels(&truth.labels),
        CascadeConfig::default(),
        &features,
        frames_per_step,
    )?;
    let mut oracle = OracleProvider::new(truth.labels.clone());

    for chunk in sample.audio.samples().chunks(frames_per_step * features.hop_samples()) {
        for event in engine.push_audio(chunk)? {
            match &event {
                Event::StepLabeled { .. } => {}
                Event::EscalationIssued { step, id, window } => {
                    println!("step {step:>3}: escalate #{id} with {:.2} s of context", window.pcm.len() as f64 / 16000.0);
                    let verdict = oracle.verdict(*id, window)?;
                    for applied in engine.deliver_verdict(*id, verdict)? {
                        println!("          {applied:?}");
                    }
                }
                other => println!("step {:>3}: {other:?}", other.step()),
            }
        }
    }
    let (track, _) = engine.finalize(&mut oracle)?;
    println!("{} escalations over {} steps", engine.escalation_count(), engine.steps());
    for (state, start, end) in segments_from_frames(&track).spans() {
        println!("  {:<5} {start:6.1} .. {end:6.1} s", state.as_str());
    }
    Ok(())
}
