use std::collections::{BTreeMap, VecDeque};

use ndarray::{Array2, ArrayView2};

use super::{CascadeConfig, CascadeError, StepClassifier, Verdict, VerdictProvider, Window};
use crate::audio::{AudioBuffer, FeatureConfig, MelExtractor};
use crate::labels::{FrameTrack, TurnState};
use crate::nn::{LightStream, Params};

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    StepLabeled { step: usize, state: TurnState, provisional: bool },
    EscalationIssued { step: usize, id: u64, window: Window },
    /// Steps `span.0..span.1` now carry `state`.
    VerdictApplied { step: usize, id: u64, span: (usize, usize), state: TurnState },
    /// Speech resumed before the verdict; steps `span.0..span.1` are Pause.
    RunCancelled { step: usize, id: u64, span: (usize, usize) },
}

impl Event {
    pub fn step(&self) -> usize {
        match *self {
            Event::StepLabeled { step, .. }
            | Event::EscalationIssued { step, .. }
            | Event::VerdictApplied { step, .. }
            | Event::RunCancelled { step, .. } => step,
        }
    }
}

#[derive(Debug)]
struct Run {
    start: usize,
    escalation: Option<u64>,
    verdict: Option<TurnState>,
}

#[derive(Debug)]
enum Status {
    Pending(Window),
    Applied,
    Cancelled,
}

/// Single-owner streaming state machine. Never blocks except in
/// [`CascadeEngine::finalize`].
#[derive(Debug)]
pub struct CascadeEngine<C> {
    config: CascadeConfig,
    classifier: C,
    extractor: MelExtractor,
    frames_per_step: usize,
    window_frames: usize,
    labels: Vec<TurnState>,
    light_su: Vec<bool>,
    run: Option<Run>,
    escalations: BTreeMap<u64, Status>,
    next_id: u64,
    ring: VecDeque<Vec<f32>>,
    frames_in_steps: usize,
    pending: Vec<Vec<f32>>,
    pcm: Vec<i16>,
    pcm_base: usize,
    finalized: bool,
}

impl<C: StepClassifier> CascadeEngine<C> {
    pub fn new(classifier: C, config: CascadeConfig, features: &FeatureConfig, frames_per_step: usize) -> Result<Self, CascadeError> {
        config.validate()?;
        if frames_per_step == 0 {
            return Err(CascadeError::Config("frames_per_step must be positive".into()));
        }
        Ok(Self {
            window_frames: config.window_frames(features),
            config,
            classifier,
            extractor: MelExtractor::new(features.clone())?,
            frames_per_step,
            labels: Vec::new(),
            light_su: Vec::new(),
            run: None,
            escalations: BTreeMap::new(),
            next_id: 1,
            ring: VecDeque::new(),
            frames_in_steps: 0,
            pending: Vec::new(),
            pcm: Vec::new(),
            pcm_base: 0,
            finalized: false,
        })
    }

    pub fn steps(&self) -> usize {
        self.labels.len()
    }

    /// Current labels; steps of an unresolved run carry the provisional label.
    pub fn labels(&self) -> &[TurnState] {
        &self.labels
    }

    /// The classifier's SU decision for every step pushed so far.
    pub fn light_su(&self) -> &[bool] {
        &self.light_su
    }

    pub fn escalation_count(&self) -> usize {
        self.escalations.len()
    }

    /// Appends audio; runs a step whenever a full step of frames is available.
    pub fn push_audio(&mut self, samples: &[i16]) -> Result<Vec<Event>, CascadeError> {
        if self.finalized {
            return Err(CascadeError::Finalized);
        }
        self.pcm.extend_from_slice(samples);
        let (window, hop) = (self.extractor.config().window_samples(), self.extractor.config().hop_samples());
        let mut events = Vec::new();
        loop {
            let frame = self.frames_in_steps + self.pending.len();
            let start = frame * hop;
            if start + window > self.pcm_base + self.pcm.len() {
                break;
            }
            let lo = start - self.pcm_base;
            let row = self.extractor.extract(&self.pcm[lo..lo + window]).into_frames().into_raw_vec_and_offset().0;
            self.pending.push(row);
            if self.pending.len() == self.frames_per_step {
                let rows = std::mem::take(&mut self.pending);
                let n_mels = rows[0].len();
                let block = Array2::from_shape_vec((rows.len(), n_mels), rows.concat()).expect("uniform rows");
                events.extend(self.push_step(block.view())?);
            }
        }
        Ok(events)
    }

    fn window(&self) -> Window {
        let n_mels = self.ring.front().map_or(0, Vec::len);
        let rows: Vec<f32> = self.ring.iter().flatten().copied().collect();
        let features = Array2::from_shape_vec((self.ring.len(), n_mels), rows).expect("uniform rows");
        let cfg = self.extractor.config();
        let first = self.frames_in_steps - self.ring.len();
        let (start, end) = (first * cfg.hop_samples(), first * cfg.hop_samples() + cfg.span_samples(self.ring.len()));
        let pcm = if start >= self.pcm_base && end <= self.pcm_base + self.pcm.len() {
            self.pcm[start - self.pcm_base..end - self.pcm_base].to_vec()
        } else {
            Vec::new()
        };
        Window { end_step: self.labels.len() - 1, features, pcm }
    }

    fn relabel(&mut self, from: usize, state: TurnState) {
        for l in &mut self.labels[from..] {
            *l = state;
        }
    }

    /// Classifies one step of `frames_per_step` feature frames.
    pub fn push_step(&mut self, block: ArrayView2<f32>) -> Result<Vec<Event>, CascadeError> {
        if self.finalized {
            return Err(CascadeError::Finalized);
        }
        for row in block.rows() {
            self.ring.push_back(row.to_vec());
            if self.ring.len() > self.window_frames {
                self.ring.pop_front();
            }
        }
        self.frames_in_steps += block.nrows();
        let keep_from = self.frames_in_steps.saturating_sub(self.window_frames) * self.extractor.config().hop_samples();
        if keep_from > self.pcm_base {
            let drop = (keep_from - self.pcm_base).min(self.pcm.len());
            self.pcm.drain(..drop);
            self.pcm_base += drop;
        }

        let step = self.labels.len();
        let p_su = self.classifier.step(block)?;
        let is_su = p_su as f64 >= self.config.su_threshold;
        self.light_su.push(is_su);
        let mut events = Vec::new();

        if is_su {
            if let Some(run) = self.run.take() {
                match run.escalation {
                    Some(id) if run.verdict.is_none() => {
                        self.escalations.insert(id, Status::Cancelled);
                        self.relabel(run.start, TurnState::Pause);
                        events.push(Event::RunCancelled { step, id, span: (run.start, step) });
                    }
                    None => self.relabel(run.start, TurnState::Pause),
                    Some(_) => {}
                }
            }
            self.labels.push(TurnState::SU);
            events.push(Event::StepLabeled { step, state: TurnState::SU, provisional: false });
            return Ok(events);
        }

        let run = self.run.get_or_insert(Run { start: step, escalation: None, verdict: None });
        let (state, provisional) = match run.verdict {
            Some(v) => (v, false),
            None => (self.config.provisional_label, true),
        };
        let (start, escalated) = (run.start, run.escalation.is_some());
        self.labels.push(state);
        events.push(Event::StepLabeled { step, state, provisional });
        if !escalated && step + 1 - start >= self.config.debounce_steps {
            events.push(self.escalate());
        }
        Ok(events)
    }

    fn escalate(&mut self) -> Event {
        let id = self.next_id;
        self.next_id += 1;
        let window = self.window();
        self.escalations.insert(id, Status::Pending(window.clone()));
        if let Some(run) = self.run.as_mut() {
            run.escalation = Some(id);
        }
        Event::EscalationIssued { step: self.labels.len() - 1, id, window }
    }

    /// Applies a verdict to the run escalated as `id`. A verdict for a run
    /// that speech already ended is discarded.
    pub fn deliver_verdict(&mut self, id: u64, verdict: Verdict) -> Result<Vec<Event>, CascadeError> {
        if self.finalized {
            return Err(CascadeError::Finalized);
        }
        if !verdict.state.is_silence() {
            return Err(CascadeError::NotSilence(verdict.state));
        }
        match self.escalations.get(&id) {
            None => return Err(CascadeError::UnknownId(id)),
            Some(Status::Applied) => return Err(CascadeError::DuplicateVerdict(id)),
            Some(Status::Cancelled) => return Ok(Vec::new()),
            Some(Status::Pending(_)) => {}
        }
        self.escalations.insert(id, Status::Applied);
        let run = self.run.as_mut().expect("a pending escalation belongs to the open run");
        run.verdict = Some(verdict.state);
        let start = run.start;
        self.relabel(start, verdict.state);
        let end = self.labels.len();
        Ok(vec![Event::VerdictApplied { step: end - 1, id, span: (start, end), state: verdict.state }])
    }

    /// Resolves any open run through `provider` and returns the final labels
    /// with the events emitted while doing so.
    pub fn finalize(&mut self, provider: &mut dyn VerdictProvider) -> Result<(FrameTrack, Vec<Event>), CascadeError> {
        if self.finalized {
            return Err(CascadeError::Finalized);
        }
        let mut events = Vec::new();
        if let Some(run) = &self.run {
            if run.verdict.is_none() {
                let id = match run.escalation {
                    Some(id) => id,
                    None => {
                        let ev = self.escalate();
                        events.push(ev);
                        self.next_id - 1
                    }
                };
                let Some(Status::Pending(window)) = self.escalations.get(&id) else {
                    unreachable!("open run without verdict has a pending escalation")
                };
                let verdict = provider.verdict(id, &window.clone())?;
                events.extend(self.deliver_verdict(id, verdict)?);
            }
        }
        self.finalized = true;
        Ok((FrameTrack::new(self.labels.clone()), events))
    }
}

/// Outcome of a whole-sample cascade run.
#[derive(Debug, Clone)]
pub struct CascadeRun {
    pub track: FrameTrack,
    pub events: Vec<Event>,
    pub escalations: usize,
    pub light_su: Vec<bool>,
}

/// Streams `audio` through an engine in one-step chunks, answering each
/// escalation synchronously.
pub fn run_offline_with<C: StepClassifier>(
    audio: &AudioBuffer,
    classifier: C,
    frames_per_step: usize,
    provider: &mut dyn VerdictProvider,
    config: &CascadeConfig,
    features: &FeatureConfig,
) -> Result<CascadeRun, CascadeError> {
    let mut engine = CascadeEngine::new(classifier, config.clone(), features, frames_per_step)?;
    let chunk = frames_per_step * features.hop_samples();
    let mut events = Vec::new();
    for samples in audio.samples().chunks(chunk) {
        for ev in engine.push_audio(samples)? {
            let answer = match &ev {
                Event::EscalationIssued { id, window, .. } => Some((*id, provider.verdict(*id, window)?)),
                _ => None,
            };
            events.push(ev);
            if let Some((id, verdict)) = answer {
                events.extend(engine.deliver_verdict(id, verdict)?);
            }
        }
    }
    let (track, tail) = engine.finalize(provider)?;
    events.extend(tail);
    Ok(CascadeRun { track, events, escalations: engine.escalation_count(), light_su: engine.light_su().to_vec() })
}

/// [`run_offline_with`] using the light model as the step classifier.
pub fn run_offline(
    audio: &AudioBuffer,
    light: &Params,
    provider: &mut dyn VerdictProvider,
    config: &CascadeConfig,
    features: &FeatureConfig,
) -> Result<CascadeRun, CascadeError> {
    let stream = LightStream::new(light)?;
    let frames_per_step = stream.arch().frames_per_step;
    run_offline_with(audio, stream, frames_per_step, provider, config, features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{OracleProvider, ScriptedClassifier};
    use crate::labels::TurnState::*;

    struct Fixed(TurnState, usize);

    impl VerdictProvider for Fixed {
        fn verdict(&mut self, _id: u64, _w: &Window) -> Result<Verdict, CascadeError> {
            self.1 += 1;
            Ok(Verdict::from_p_gap(if self.0 == Gap { 0.9 } else { 0.1 }))
        }
    }

    fn engine(pattern: &str) -> CascadeEngine<ScriptedClassifier> {
        let probs = pattern.chars().map(|c| if c == 'S' { 1.0 } else { 0.0 }).collect();
        CascadeEngine::new(ScriptedClassifier::new(probs), CascadeConfig::default(), &FeatureConfig::default(), 10).unwrap()
    }

    fn push(e: &mut CascadeEngine<ScriptedClassifier>, n: usize) -> Vec<Event> {
        let block = Array2::<f32>::zeros((10, 40));
        (0..n).flat_map(|_| e.push_step(block.view()).unwrap()).collect()
    }

    fn escalations(events: &[Event]) -> Vec<usize> {
        events.iter().filter_map(|e| matches!(e, Event::EscalationIssued { .. }).then(|| e.step())).collect()
    }

    #[test]
    fn speech_only_never_escalates() {
        let mut e = engine("SSSSSSSSSS");
        let events = push(&mut e, 10);
        assert_eq!(events.len(), 10);
        assert!(events.iter().all(|ev| matches!(ev, Event::StepLabeled { state: SU, provisional: false, .. })));
        let (track, tail) = e.finalize(&mut Fixed(Gap, 0)).unwrap();
        assert!(tail.is_empty());
        assert_eq!(track.labels, vec![SU; 10]);
    }

    #[test]
    fn escalates_once_after_debounce() {
        let mut e = engine("SS..");
        let events = push(&mut e, 4);
        assert_eq!(escalations(&events), vec![3]);
        let Event::EscalationIssued { window, .. } = &events[4] else { panic!() };
        assert_eq!(window.features.nrows(), 40);
        assert_eq!(window.end_step, 3);
        assert!(window.pcm.is_empty());
    }

    #[test]
    fn short_dip_is_pause_without_escalation() {
        let mut e = engine("S.S");
        let events = push(&mut e, 3);
        assert!(escalations(&events).is_empty());
        let (track, _) = e.finalize(&mut Fixed(Gap, 0)).unwrap();
        assert_eq!(track.labels, vec![SU, Pause, SU]);
    }

    #[test]
    fn gap_verdict_relabels_the_whole_run() {
        let mut e = engine("S.....");
        push(&mut e, 3);
        let id = 1;
        let applied = e.deliver_verdict(id, Verdict::from_p_gap(0.8)).unwrap();
        assert_eq!(applied, vec![Event::VerdictApplied { step: 2, id, span: (1, 3), state: Gap }]);
        let later = push(&mut e, 3);
        assert!(later.iter().all(|ev| matches!(ev, Event::StepLabeled { state: Gap, provisional: false, .. })));
        let (track, _) = e.finalize(&mut Fixed(Pause, 0)).unwrap();
        assert_eq!(track.labels, vec![SU, Gap, Gap, Gap, Gap, Gap]);
    }

    #[test]
    fn stale_verdict_is_discarded() {
        let mut e = engine("S...S");
        let events = push(&mut e, 5);
        assert!(events.iter().any(|ev| matches!(ev, Event::RunCancelled { id: 1, span: (1, 4), .. })));
        assert!(e.deliver_verdict(1, Verdict::from_p_gap(0.9)).unwrap().is_empty());
        assert_eq!(e.labels(), &[SU, Pause, Pause, Pause, SU]);
    }

    #[test]
    fn bad_deliveries_rejected() {
        let mut e = engine("...");
        push(&mut e, 3);
        assert!(matches!(e.deliver_verdict(7, Verdict::from_p_gap(0.9)), Err(CascadeError::UnknownId(7))));
        e.deliver_verdict(1, Verdict::from_p_gap(0.9)).unwrap();
        assert!(matches!(e.deliver_verdict(1, Verdict::from_p_gap(0.9)), Err(CascadeError::DuplicateVerdict(1))));
        let su = Verdict { state: SU, p_gap: 0.0 };
        assert!(matches!(e.deliver_verdict(1, su), Err(CascadeError::NotSilence(SU))));
    }

    #[test]
    fn finalize_resolves_open_runs() {
        let mut empty = engine("");
        assert!(empty.finalize(&mut Fixed(Gap, 0)).unwrap().0.labels.is_empty());

        let mut e = engine("SS.");
        push(&mut e, 3);
        let mut provider = Fixed(Gap, 0);
        let (track, tail) = e.finalize(&mut provider).unwrap();
        assert_eq!(track.labels, vec![SU, SU, Gap]);
        assert_eq!(provider.1, 1);
        assert!(matches!(tail[0], Event::EscalationIssued { step: 2, .. }));
        assert!(matches!(e.push_step(Array2::zeros((10, 40)).view()), Err(CascadeError::Finalized)));
        assert!(matches!(e.finalize(&mut provider), Err(CascadeError::Finalized)));
    }

    #[test]
    fn all_silence_audio_gets_one_verdict() {
        let audio = AudioBuffer::silence(16_000 * 2);
        let steps = FeatureConfig::default().num_frames(audio.len()) / 10;
        let mut provider = OracleProvider::new(vec![Gap; steps]);
        let run = run_offline_with(
            &audio,
            ScriptedClassifier::new(vec![0.0; steps]),
            10,
            &mut provider,
            &CascadeConfig::default(),
            &FeatureConfig::default(),
        )
        .unwrap();
        assert_eq!(run.escalations, 1);
        assert_eq!(run.track.labels, vec![Gap; steps]);
        let mut last = 0;
        for ev in &run.events {
            assert!(ev.step() >= last);
            last = ev.step();
        }
    }

    #[test]
    fn window_audio_reproduces_window_features() {
        use crate::audio::{synth_utterance, TerminalContour, UtteranceSpec};
        let spec = UtteranceSpec { duration_s: 4.0, base_f0: 140.0, terminal_contour: TerminalContour::Falling, amplitude: 0.5, seed: 1 };
        let mut audio = synth_utterance(&spec).unwrap();
        audio.push_silence(8000);
        let features = FeatureConfig::default();
        let steps = features.num_frames(audio.len()) / 10;
        let mut probs = vec![1.0; steps];
        probs[steps - 3..].fill(0.0);
        let mut provider = OracleProvider::new(vec![Gap; steps]);
        let run =
            run_offline_with(&audio, ScriptedClassifier::new(probs), 10, &mut provider, &CascadeConfig::default(), &features)
                .unwrap();
        let Some(Event::EscalationIssued { window, .. }) = run.events.iter().find(|e| matches!(e, Event::EscalationIssued { .. }))
        else {
            panic!("no escalation")
        };
        assert_eq!(window.features.nrows(), 300);
        assert_eq!(window.pcm.len(), features.span_samples(300));
        let again = super::super::window_features(&window.pcm, &features).unwrap();
        assert_eq!(again, window.features);
        // the same frames as offline extraction of the whole signal
        let all = MelExtractor::new(features).unwrap().extract(audio.samples()).into_frames();
        let end = (window.end_step + 1) * 10;
        assert_eq!(all.slice(ndarray::s![end - 300..end, ..]), window.features);
    }
}
