use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::labels::{FrameTrack, TurnState};

/// Per-class scores from pooled confusion counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub state: TurnState,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    /// Frames of this class in the truth.
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassScores {
    pub fn from_counts(state: TurnState, tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        let iou = ratio(tp, tp + fp + fn_);
        Self { state, tp, fp, fn_, precision, recall, f1, iou, support: tp + fn_ }
    }

    fn tally(state: TurnState, pairs: impl Iterator<Item = (TurnState, TurnState)>) -> Self {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (p, t) in pairs {
            match (p == state, t == state) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        Self::from_counts(state, tp, fp, fn_)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryReport {
    /// Macro averages over Pause and Gap.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub pause: ClassScores,
    pub gap: ClassScores,
    pub n: usize,
    /// Samples left out because they end in speech.
    pub excluded: usize,
}

pub fn binary_metrics(predictions: &[TurnState], truths: &[TurnState]) -> Result<BinaryReport, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch { sample: "binary".into(), pred: predictions.len(), truth: truths.len() });
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(&bad) = predictions.iter().chain(truths).find(|s| !s.is_silence()) {
        return Err(EvalError::NotSilence(bad));
    }
    let pairs = || predictions.iter().copied().zip(truths.iter().copied());
    let pause = ClassScores::tally(TurnState::Pause, pairs());
    let gap = ClassScores::tally(TurnState::Gap, pairs());
    let correct = pairs().filter(|(p, t)| p == t).count();
    Ok(BinaryReport {
        precision: (pause.precision + gap.precision) / 2.0,
        recall: (pause.recall + gap.recall) / 2.0,
        f1: (pause.f1 + gap.f1) / 2.0,
        accuracy: correct as f64 / predictions.len() as f64,
        pause,
        gap,
        n: predictions.len(),
        excluded: 0,
    })
}

/// Predicted and reference step labels for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPair {
    pub sample_id: String,
    pub pred: FrameTrack,
    pub truth: FrameTrack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    /// SU, Gap, Pause in that order.
    pub classes: Vec<ClassScores>,
    pub macro_f1: f64,
    pub macro_iou: f64,
    /// Classes missing from both predictions and truth; each scores 0.
    pub absent: Vec<TurnState>,
    pub frames: usize,
    pub samples: usize,
}

impl SegReport {
    pub fn class(&self, state: TurnState) -> Option<&ClassScores> {
        self.classes.iter().find(|c| c.state == state)
    }
}

pub const SEG_CLASSES: [TurnState; 3] = [TurnState::SU, TurnState::Gap, TurnState::Pause];

/// Frame-level scores pooled over all samples, then macro-averaged over
/// the three classes.
pub fn segmentation_metrics(samples: &[TrackPair]) -> Result<SegReport, EvalError> {
    for s in samples {
        if s.pred.len() != s.truth.len() {
            return Err(EvalError::LengthMismatch {
                sample: s.sample_id.clone(),
                pred: s.pred.len(),
                truth: s.truth.len(),
            });
        }
    }
    let pairs = || samples.iter().flat_map(|s| s.pred.labels.iter().copied().zip(s.truth.labels.iter().copied()));
    let classes: Vec<ClassScores> = SEG_CLASSES.iter().map(|&c| ClassScores::tally(c, pairs())).collect();
    let absent = classes.iter().filter(|c| c.tp + c.fp + c.fn_ == 0).map(|c| c.state).collect();
    let k = classes.len() as f64;
    Ok(SegReport {
        macro_f1: classes.iter().map(|c| c.f1).sum::<f64>() / k,
        macro_iou: classes.iter().map(|c| c.iou).sum::<f64>() / k,
        classes,
        absent,
        frames: pairs().count(),
        samples: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::TurnState::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn pair(pred: Vec<TurnState>, truth: Vec<TurnState>) -> TrackPair {
        TrackPair { sample_id: "s".into(), pred: FrameTrack::new(pred), truth: FrameTrack::new(truth) }
    }

    #[test]
    fn binary_hand_count() {
        let r = binary_metrics(&[Gap, Pause, Pause, Pause], &[Gap, Gap, Pause, Pause]).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.gap.precision, 1.0);
        assert_eq!(r.gap.recall, 0.5);
        assert!((r.gap.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.pause.precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.pause.recall, 1.0);
        assert!((r.pause.f1 - 0.8).abs() < 1e-12);
        assert!((r.f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn binary_edge_cases() {
        let perfect = binary_metrics(&[Gap, Pause, Gap], &[Gap, Pause, Gap]).unwrap();
        assert_eq!((perfect.precision, perfect.recall, perfect.f1, perfect.accuracy), (1.0, 1.0, 1.0, 1.0));
        let constant = binary_metrics(&[Gap; 4], &[Gap, Gap, Pause, Pause]).unwrap();
        assert_eq!(constant.accuracy, 0.5);
        assert!(matches!(binary_metrics(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(binary_metrics(&[Gap], &[Gap, Gap]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(binary_metrics(&[SU], &[Gap]), Err(EvalError::NotSilence(SU))));
    }

    #[test]
    fn segmentation_hand_count() {
        let r = segmentation_metrics(&[pair(vec![SU, SU, Gap, Gap], vec![SU, SU, SU, Gap])]).unwrap();
        assert!((r.class(SU).unwrap().iou - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.class(Gap).unwrap().iou - 0.5).abs() < 1e-12);
        assert_eq!(r.class(Pause).unwrap().iou, 0.0);
        assert_eq!(r.absent, vec![Pause]);
        assert!((r.macro_iou - (2.0 / 3.0 + 0.5) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn segmentation_perfect_and_mismatch() {
        let r = segmentation_metrics(&[pair(vec![SU, Gap, Pause], vec![SU, Gap, Pause])]).unwrap();
        assert_eq!((r.macro_f1, r.macro_iou), (1.0, 1.0));
        let err = segmentation_metrics(&[pair(vec![SU], vec![SU, SU])]).unwrap_err();
        assert!(err.to_string().contains('s'));
    }

    fn states() -> impl Strategy<Value = TurnState> {
        prop_oneof![Just(SU), Just(Gap), Just(Pause)]
    }

    proptest! {
        #[test]
        fn iou_matches_set_oracle(tracks in proptest::collection::vec(
            (1usize..50).prop_flat_map(|n| (proptest::collection::vec(states(), n), proptest::collection::vec(states(), n))),
            1..4,
        )) {
            let pairs: Vec<TrackPair> = tracks.iter().map(|(p, t)| pair(p.clone(), t.clone())).collect();
            let r = segmentation_metrics(&pairs).unwrap();
            for c in SEG_CLASSES {
                let set = |pick: &dyn Fn(&(Vec<TurnState>, Vec<TurnState>)) -> &Vec<TurnState>| -> BTreeSet<(usize, usize)> {
                    tracks.iter().enumerate().flat_map(|(s, tr)| {
                        pick(tr).iter().enumerate().filter(|(_, &l)| l == c).map(move |(i, _)| (s, i)).collect::<Vec<_>>()
                    }).collect()
                };
                let a = set(&|tr| &tr.0);
                let b = set(&|tr| &tr.1);
                let inter = a.intersection(&b).count();
                let union = a.union(&b).count();
                let iou = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
                let scores = r.class(c).unwrap();
                prop_assert!((scores.iou - iou).abs() < 1e-12);
                prop_assert!(scores.iou <= scores.f1 + 1e-15);
            }
        }
    }
}
