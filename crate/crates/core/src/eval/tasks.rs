use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::{binary_metrics, segmentation_metrics, BinaryReport, EvalError, SegReport, TrackPair};
use crate::audio::{AudioBuffer, FeatureConfig, MelExtractor};
use crate::cascade::{
    run_offline_with, CascadeConfig, InProcessProvider, StepClassifier, VerdictProvider, Window,
};
use crate::datagen::Manifest;
use crate::labels::{rasterize, FrameTrack, TurnState, STEP_MS};
use crate::nn::{count_flops, heavy_forward_batch, ArchKind, FlopsInput, LightStream, Params, HEAVY_SILENCE_OFFSET_S, MIN_WINDOW_FRAMES};

/// Windows per heavy forward call.
const HEAVY_BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamMode {
    /// Light labels only; non-SU steps get the fallback label.
    LightOnly,
    /// Heavy verdict at every non-SU step, heavy compute charged at every step.
    HeavyEverywhere,
    Speculative,
}

impl StreamMode {
    pub const ALL: [StreamMode; 3] = [StreamMode::LightOnly, StreamMode::HeavyEverywhere, StreamMode::Speculative];

    pub fn as_str(self) -> &'static str {
        match self {
            StreamMode::LightOnly => "light_only",
            StreamMode::HeavyEverywhere => "heavy_everywhere",
            StreamMode::Speculative => "speculative",
        }
    }
}

impl fmt::Display for StreamMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StreamMode {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s.replace('-', "_"))
            .ok_or_else(|| EvalError::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeReport {
    pub mode: StreamMode,
    pub samples: usize,
    pub steps: u64,
    pub light_flops_per_step: u64,
    pub heavy_flops_per_invocation: u64,
    /// Escalations for the cascade, every step for heavy-everywhere.
    pub heavy_invocations: u64,
    pub light_flops: u64,
    pub heavy_flops: u64,
    pub total_flops: u64,
    pub flops_per_sample: f64,
    /// Wall-clock milliseconds per step; not reproducible, so optional.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms_per_step: Option<f64>,
}

impl ComputeReport {
    fn new(mode: StreamMode, samples: usize, steps: u64, light_per_step: u64, heavy_per_call: u64, calls: u64) -> Self {
        let light_flops = light_per_step * steps;
        let heavy_flops = heavy_per_call * calls;
        let total_flops = light_flops + heavy_flops;
        Self {
            mode,
            samples,
            steps,
            light_flops_per_step: light_per_step,
            heavy_flops_per_invocation: heavy_per_call,
            heavy_invocations: calls,
            light_flops,
            heavy_flops,
            total_flops,
            flops_per_sample: if samples == 0 { 0.0 } else { total_flops as f64 / samples as f64 },
            wall_ms_per_step: None,
        }
    }

    /// `total == light per step × steps + heavy per call × calls`.
    pub fn identity_holds(&self) -> bool {
        self.total_flops == self.light_flops_per_step * self.steps + self.heavy_flops_per_invocation * self.heavy_invocations
            && self.total_flops == self.light_flops + self.heavy_flops
    }
}

/// One conversation prepared for streaming evaluation.
#[derive(Debug, Clone)]
pub struct StreamSample {
    pub sample_id: String,
    pub audio: AudioBuffer,
    pub truth: FrameTrack,
}

pub fn load_stream_samples(manifest: &Manifest) -> Result<Vec<StreamSample>, EvalError> {
    manifest
        .entries
        .iter()
        .map(|entry| {
            Ok(StreamSample {
                sample_id: entry.sample_id.clone(),
                audio: manifest.load_audio(entry)?,
                truth: rasterize(&manifest.load_track(entry)?, STEP_MS)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamOptions {
    pub cascade: CascadeConfig,
    pub features: FeatureConfig,
    /// Label given to non-SU steps in light-only mode.
    pub fallback: TurnState,
    pub frames_per_step: usize,
    pub light_flops_per_step: u64,
    pub heavy_flops_per_invocation: u64,
}

impl StreamOptions {
    /// Options with FLOP counts taken from the two models.
    pub fn for_models(light: &Params, heavy: &Params, cascade: CascadeConfig, features: FeatureConfig) -> Result<Self, EvalError> {
        light.expect_kind(ArchKind::Light)?;
        heavy.expect_kind(ArchKind::Heavy)?;
        let frames_per_step = match light.arch() {
            crate::nn::Arch::Light(a) => a.frames_per_step,
            crate::nn::Arch::Heavy(_) => unreachable!(),
        };
        Ok(Self {
            cascade,
            features,
            fallback: TurnState::Pause,
            frames_per_step,
            light_flops_per_step: count_flops(&light.arch(), FlopsInput::Steps(1))?,
            heavy_flops_per_invocation: count_flops(&heavy.arch(), FlopsInput::Window)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub sample_id: String,
    pub pred: FrameTrack,
    /// Truth cut to the predicted length.
    pub truth: FrameTrack,
    pub light_su: Vec<bool>,
    pub heavy_invocations: usize,
}

#[derive(Debug, Clone)]
pub struct StreamOutcome {
    pub seg: SegReport,
    pub compute: ComputeReport,
    pub samples: Vec<SampleOutcome>,
}

/// Streaming evaluation with caller-supplied per-sample classifier and provider.
pub fn evaluate_stream_with<C, P>(
    samples: &[StreamSample],
    mut classifier: impl FnMut(&StreamSample) -> Result<C, EvalError>,
    mut provider: impl FnMut(&StreamSample) -> Result<P, EvalError>,
    mode: StreamMode,
    opts: &StreamOptions,
) -> Result<StreamOutcome, EvalError>
where
    C: StepClassifier,
    P: VerdictProvider,
{
    opts.cascade.validate()?;
    let extractor = MelExtractor::new(opts.features.clone())?;
    let started = Instant::now();
    let mut outcomes = Vec::with_capacity(samples.len());
    for sample in samples {
        let mut cls = classifier(sample)?;
        let (pred, light_su, calls) = match mode {
            StreamMode::Speculative => {
                let mut prov = provider(sample)?;
                let run = run_offline_with(&sample.audio, cls, opts.frames_per_step, &mut prov, &opts.cascade, &opts.features)?;
                (run.track.labels, run.light_su, run.escalations)
            }
            StreamMode::LightOnly | StreamMode::HeavyEverywhere => {
                let frames = extractor.extract(sample.audio.samples()).into_frames();
                let light_su = light_pass(&mut cls, &frames, opts)?;
                let mut labels: Vec<TurnState> =
                    light_su.iter().map(|&su| if su { TurnState::SU } else { opts.fallback }).collect();
                let mut calls = 0;
                if mode == StreamMode::HeavyEverywhere {
                    calls = light_su.len();
                    let mut prov = provider(sample)?;
                    heavy_pass(&mut prov, &frames, &light_su, &mut labels, opts)?;
                }
                (labels, light_su, calls)
            }
        };
        let n = pred.len().min(sample.truth.len());
        outcomes.push(SampleOutcome {
            sample_id: sample.sample_id.clone(),
            pred: FrameTrack::new(pred[..n].to_vec()),
            truth: FrameTrack::new(sample.truth.labels[..n].to_vec()),
            light_su,
            heavy_invocations: calls,
        });
    }
    let pairs: Vec<TrackPair> = outcomes
        .iter()
        .map(|o| TrackPair { sample_id: o.sample_id.clone(), pred: o.pred.clone(), truth: o.truth.clone() })
        .collect();
    let seg = segmentation_metrics(&pairs)?;
    let steps: u64 = outcomes.iter().map(|o| o.light_su.len() as u64).sum();
    let calls: u64 = outcomes.iter().map(|o| o.heavy_invocations as u64).sum();
    let mut compute =
        ComputeReport::new(mode, samples.len(), steps, opts.light_flops_per_step, opts.heavy_flops_per_invocation, calls);
    if steps > 0 {
        compute.wall_ms_per_step = Some(started.elapsed().as_secs_f64() * 1000.0 / steps as f64);
    }
    Ok(StreamOutcome { seg, compute, samples: outcomes })
}

fn light_pass<C: StepClassifier>(cls: &mut C, frames: &Array2<f32>, opts: &StreamOptions) -> Result<Vec<bool>, EvalError> {
    let fps = opts.frames_per_step;
    (0..frames.nrows() / fps)
        .map(|t| {
            let p = cls.step(frames.slice(s![t * fps..(t + 1) * fps, ..]))?;
            Ok(p as f64 >= opts.cascade.su_threshold)
        })
        .collect()
}

fn heavy_pass<P: VerdictProvider>(
    provider: &mut P,
    frames: &Array2<f32>,
    light_su: &[bool],
    labels: &mut [TurnState],
    opts: &StreamOptions,
) -> Result<(), EvalError> {
    let fps = opts.frames_per_step;
    let width = opts.cascade.window_frames(&opts.features);
    let silent: Vec<usize> = (0..light_su.len()).filter(|&t| !light_su[t]).collect();
    for chunk in silent.chunks(HEAVY_BATCH) {
        let windows: Vec<Window> = chunk
            .iter()
            .map(|&t| {
                let end = (t + 1) * fps;
                let begin = end.saturating_sub(width);
                Window { end_step: t, features: frames.slice(s![begin..end, ..]).to_owned(), pcm: Vec::new() }
            })
            .collect();
        for (&t, verdict) in chunk.iter().zip(provider.verdict_batch(&windows)?) {
            labels[t] = verdict.state;
        }
    }
    Ok(())
}

/// Streaming evaluation with the light model and the in-process heavy model.
pub fn evaluate_stream_task(
    manifest: &Manifest,
    light: &Params,
    heavy: &Params,
    mode: StreamMode,
    cascade: &CascadeConfig,
    features: &FeatureConfig,
) -> Result<StreamOutcome, EvalError> {
    let opts = StreamOptions::for_models(light, heavy, cascade.clone(), features.clone())?;
    let samples = load_stream_samples(manifest)?;
    evaluate_stream_with(
        &samples,
        |_| Ok(LightStream::new(light)?),
        |_| Ok(InProcessProvider::new(heavy, features)?),
        mode,
        &opts,
    )
}

/// Labeled heavy-model windows, one per eligible sample.
pub type BinaryWindows = Vec<(String, Array2<f32>, TurnState)>;

/// Window for the binary task: it ends shortly after the final silence
/// begins, as in heavy training.
pub fn binary_windows(
    manifest: &Manifest,
    features: &FeatureConfig,
    window_frames: usize,
) -> Result<(BinaryWindows, usize), EvalError> {
    let extractor = MelExtractor::new(features.clone())?;
    let mut out = Vec::new();
    let mut excluded = 0;
    for entry in &manifest.entries {
        let track = manifest.load_track(entry)?;
        let Some((state, start, _)) = track.spans().last().filter(|(s, _, _)| s.is_silence()) else {
            log::warn!("{}: does not end in silence, excluded", entry.sample_id);
            excluded += 1;
            continue;
        };
        let frames = extractor.extract(manifest.load_audio(entry)?.samples()).into_frames();
        let end = crate::nn::frame_at(start + HEAVY_SILENCE_OFFSET_S, features).min(frames.nrows());
        if end < MIN_WINDOW_FRAMES {
            excluded += 1;
            continue;
        }
        let begin = end.saturating_sub(window_frames);
        out.push((entry.sample_id.clone(), frames.slice(s![begin..end, ..]).to_owned(), state));
    }
    Ok((out, excluded))
}

/// Gap-vs-Pause classification of each sample's final silence.
pub fn evaluate_binary_task(manifest: &Manifest, heavy: &Params, features: &FeatureConfig) -> Result<BinaryReport, EvalError> {
    heavy.expect_kind(ArchKind::Heavy)?;
    let window_frames = match heavy.arch() {
        crate::nn::Arch::Heavy(a) => a.window_frames,
        crate::nn::Arch::Light(_) => unreachable!(),
    };
    let (windows, excluded) = binary_windows(manifest, features, window_frames)?;
    if windows.is_empty() {
        return Err(EvalError::NoEligible);
    }
    let mut preds = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(HEAVY_BATCH) {
        let views: Vec<_> = chunk.iter().map(|(_, w, _)| w.view()).collect();
        for (_, p_gap) in heavy_forward_batch(&views, heavy, features.floor_value())? {
            preds.push(if p_gap >= 0.5 { TurnState::Gap } else { TurnState::Pause });
        }
    }
    let truths: Vec<TurnState> = windows.iter().map(|(_, _, s)| *s).collect();
    let mut report = binary_metrics(&preds, &truths)?;
    report.excluded = excluded;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{OracleProvider, ScriptedClassifier};
    use crate::datagen::{generate_corpus, DatagenConfig, Variant};
    use crate::nn::{Arch, HeavyArch, LightArch};

    fn corpus(dir: &std::path::Path, n: usize) -> Manifest {
        let parts: Vec<_> = Variant::SYNTHETIC
            .iter()
            .map(|v| {
                generate_corpus(&DatagenConfig { variant: *v, n_samples: n, seed: 3, out_dir: dir.to_path_buf(), ..Default::default() })
                    .unwrap()
            })
            .collect();
        Manifest::merge(&parts).unwrap()
    }

    fn scripted_opts() -> StreamOptions {
        StreamOptions {
            cascade: CascadeConfig::default(),
            features: FeatureConfig::default(),
            fallback: TurnState::Pause,
            frames_per_step: 10,
            light_flops_per_step: 7,
            heavy_flops_per_invocation: 1000,
        }
    }

    fn run(samples: &[StreamSample], mode: StreamMode) -> StreamOutcome {
        evaluate_stream_with(
            samples,
            |s| Ok(ScriptedClassifier::from_labels(&s.truth.labels)),
            |s| Ok(OracleProvider::new(s.truth.labels.clone())),
            mode,
            &scripted_opts(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_light_makes_cascade_match_heavy_everywhere() {
        let dir = tempfile::tempdir().unwrap();
        let samples = load_stream_samples(&corpus(dir.path(), 6)).unwrap();
        let spec = run(&samples, StreamMode::Speculative);
        let every = run(&samples, StreamMode::HeavyEverywhere);
        assert_eq!(spec.seg, every.seg);
        for (a, b) in spec.samples.iter().zip(&every.samples) {
            assert_eq!(a.pred, b.pred, "{}", a.sample_id);
        }
        assert!(spec.compute.identity_holds() && every.compute.identity_holds());
        assert_eq!(every.compute.heavy_invocations, every.compute.steps);
        assert!(spec.compute.heavy_invocations < every.compute.heavy_invocations);

        let light = run(&samples, StreamMode::LightOnly);
        assert_eq!(light.compute.heavy_flops, 0);
        assert!(light.samples.iter().any(|s| s.truth.labels.contains(&TurnState::Gap)));
        assert_eq!(light.seg.class(TurnState::Gap).unwrap().f1, 0.0);
    }

    #[test]
    fn model_backed_modes_run() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = corpus(dir.path(), 1);
        let light = Params::init(Arch::Light(LightArch::default()), 1);
        let heavy = Params::init(Arch::Heavy(HeavyArch { hidden: 4, layers: 1, ..HeavyArch::default() }), 2);
        let fc = FeatureConfig::default();
        let mut totals = Vec::new();
        for mode in StreamMode::ALL {
            let out = evaluate_stream_task(&manifest, &light, &heavy, mode, &CascadeConfig::default(), &fc).unwrap();
            assert!(out.compute.identity_holds());
            assert_eq!(out.seg.samples, manifest.len());
            totals.push(out.compute.total_flops);
        }
        assert!(totals[0] <= totals[2] && totals[2] <= totals[1]);
        let bin = evaluate_binary_task(&manifest, &heavy, &fc).unwrap();
        assert_eq!(bin.n + bin.excluded, manifest.len());
        assert!(matches!(evaluate_binary_task(&manifest, &light, &fc), Err(EvalError::Nn(_))));
    }

    #[test]
    fn mode_names_parse() {
        for m in StreamMode::ALL {
            assert_eq!(m.as_str().parse::<StreamMode>().unwrap(), m);
        }
        assert_eq!("heavy-everywhere".parse::<StreamMode>().unwrap(), StreamMode::HeavyEverywhere);
        assert!("fast".parse::<StreamMode>().is_err());
    }
}
