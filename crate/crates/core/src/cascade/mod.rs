//! The two-stage streaming detector.
//!
//! A per-step classifier separates speech from silence; each silence run that
//! lasts `debounce_steps` is escalated once to a [`VerdictProvider`], whose
//! Pause/Gap answer relabels the whole run.

mod engine;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{FeatureConfig, FeatureError, MelExtractor};
use crate::labels::TurnState;
use crate::nn::{heavy_forward_batch, LightStream, NnError, Params};

pub use engine::{run_offline, run_offline_with, CascadeEngine, CascadeRun, Event};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StalePolicy {
    /// A verdict for a run that speech already ended is ignored.
    Discard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadeConfig {
    /// Light output at or above this is SU.
    pub su_threshold: f64,
    /// Consecutive non-SU steps before a run is escalated.
    pub debounce_steps: usize,
    pub context_window_s: f64,
    pub provisional_label: TurnState,
    pub stale_policy: StalePolicy,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            su_threshold: 0.5,
            debounce_steps: 2,
            context_window_s: 3.0,
            provisional_label: TurnState::Pause,
            stale_policy: StalePolicy::Discard,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<(), CascadeError> {
        if self.debounce_steps == 0 {
            return Err(CascadeError::Config("debounce_steps must be at least 1".into()));
        }
        if !(self.su_threshold > 0.0 && self.su_threshold < 1.0) {
            return Err(CascadeError::Config("su_threshold must lie in (0, 1)".into()));
        }
        if !(self.context_window_s > 0.0 && self.context_window_s <= 10.0) {
            return Err(CascadeError::Config("context_window_s must lie in (0, 10]".into()));
        }
        if !self.provisional_label.is_silence() {
            return Err(CascadeError::Config("provisional_label must be pause or gap".into()));
        }
        Ok(())
    }

    pub fn window_frames(&self, features: &FeatureConfig) -> usize {
        (self.context_window_s * 1000.0 / features.hop_ms).round() as usize
    }
}

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("invalid cascade config: {0}")]
    Config(String),
    #[error("engine already finalized")]
    Finalized,
    #[error("unknown escalation id {0}")]
    UnknownId(u64),
    #[error("verdict for escalation {0} already delivered")]
    DuplicateVerdict(u64),
    #[error("verdict must be pause or gap, got {0}")]
    NotSilence(TurnState),
    #[error("verdict provider failed: {0}")]
    Provider(#[source] Box<dyn std::error::Error + Send + Sync>),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Features(#[from] FeatureError),
}

/// Context sent with an escalation: trailing features and the audio they
/// were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Step whose end the window ends at.
    pub end_step: usize,
    /// At most `context_window_s` of frames, oldest first.
    pub features: Array2<f32>,
    /// Samples spanning exactly those frames; empty when the engine is fed
    /// features directly.
    pub pcm: Vec<i16>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub state: TurnState,
    pub p_gap: f32,
}

impl Verdict {
    /// Gap iff `p_gap ≥ 0.5`.
    pub fn from_p_gap(p_gap: f32) -> Self {
        let state = if p_gap >= 0.5 { TurnState::Gap } else { TurnState::Pause };
        Self { state, p_gap }
    }
}

/// Per-step speech/silence classifier.
pub trait StepClassifier {
    /// Consumes one step's `frames × mels` block and returns P(SU).
    fn step(&mut self, block: ArrayView2<f32>) -> Result<f32, CascadeError>;
}

impl StepClassifier for LightStream<'_> {
    fn step(&mut self, block: ArrayView2<f32>) -> Result<f32, CascadeError> {
        Ok(LightStream::step(self, block)?)
    }
}

/// Replays fixed probabilities, one per step.
#[derive(Debug, Clone)]
pub struct ScriptedClassifier {
    probs: Vec<f32>,
    next: usize,
}

impl ScriptedClassifier {
    pub fn new(probs: Vec<f32>) -> Self {
        Self { probs, next: 0 }
    }

    /// 1.0 for SU steps, 0.0 otherwise.
    pub fn from_labels(labels: &[TurnState]) -> Self {
        Self::new(labels.iter().map(|&l| if l == TurnState::SU { 1.0 } else { 0.0 }).collect())
    }
}

impl StepClassifier for ScriptedClassifier {
    fn step(&mut self, _block: ArrayView2<f32>) -> Result<f32, CascadeError> {
        let p = self.probs.get(self.next).copied().unwrap_or(0.0);
        self.next += 1;
        Ok(p)
    }
}

/// Answers escalations; blocking.
pub trait VerdictProvider {
    fn verdict(&mut self, id: u64, window: &Window) -> Result<Verdict, CascadeError>;

    /// Answers several windows at once; ids are not tracked.
    fn verdict_batch(&mut self, windows: &[Window]) -> Result<Vec<Verdict>, CascadeError> {
        windows.iter().map(|w| self.verdict(0, w)).collect()
    }
}

/// Runs the heavy model in the calling thread on the window's features.
#[derive(Debug, Clone)]
pub struct InProcessProvider<'a> {
    params: &'a Params,
    floor: f32,
}

impl<'a> InProcessProvider<'a> {
    pub fn new(params: &'a Params, features: &FeatureConfig) -> Result<Self, CascadeError> {
        params.expect_kind(crate::nn::ArchKind::Heavy)?;
        Ok(Self { params, floor: features.floor_value() })
    }
}

impl VerdictProvider for InProcessProvider<'_> {
    fn verdict(&mut self, _id: u64, window: &Window) -> Result<Verdict, CascadeError> {
        let (_, p_gap) = heavy_forward_batch(&[window.features.view()], self.params, self.floor)?[0];
        Ok(Verdict::from_p_gap(p_gap))
    }

    fn verdict_batch(&mut self, windows: &[Window]) -> Result<Vec<Verdict>, CascadeError> {
        let views: Vec<_> = windows.iter().map(|w| w.features.view()).collect();
        let out = heavy_forward_batch(&views, self.params, self.floor)?;
        Ok(out.into_iter().map(|(_, p_gap)| Verdict::from_p_gap(p_gap)).collect())
    }
}

/// Answers from a fixed per-step truth: the state at the window's last step.
#[derive(Debug, Clone)]
pub struct OracleProvider {
    truth: Vec<TurnState>,
}

impl OracleProvider {
    pub fn new(truth: Vec<TurnState>) -> Self {
        Self { truth }
    }
}

impl VerdictProvider for OracleProvider {
    fn verdict(&mut self, _id: u64, window: &Window) -> Result<Verdict, CascadeError> {
        let gap = self.truth.get(window.end_step) == Some(&TurnState::Gap);
        Ok(Verdict::from_p_gap(if gap { 1.0 } else { 0.0 }))
    }
}

/// Features of a PCM window, as a server recomputes them.
pub fn window_features(pcm: &[i16], features: &FeatureConfig) -> Result<Array2<f32>, CascadeError> {
    Ok(MelExtractor::new(features.clone())?.extract(pcm).into_frames())
}
