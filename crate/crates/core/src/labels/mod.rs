//! Ternary turn-state labels: segment tracks, per-step frame tracks and the
//! diarization-to-label rules for real conversations.

mod diarization;
mod raster;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diarization::{
    label_from_diarization, parse_diarization, DiarizationError, DiarizationTrack, DiarizationTurn, TargetLabels,
    MIN_SILENCE_S,
};
pub use raster::{rasterize, segments_from_frames};

/// Decision step used by every evaluation-facing track.
pub const STEP_MS: u32 = 100;

/// Slack used when comparing boundary times computed in floating point.
pub(crate) const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TurnState {
    SU,
    Pause,
    Gap,
}

impl TurnState {
    pub const ALL: [TurnState; 3] = [TurnState::SU, TurnState::Gap, TurnState::Pause];

    pub fn is_silence(self) -> bool {
        !matches!(self, TurnState::SU)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TurnState::SU => "SU",
            TurnState::Pause => "Pause",
            TurnState::Gap => "Gap",
        }
    }
}

impl fmt::Display for TurnState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TurnState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SU" => Ok(TurnState::SU),
            "Pause" => Ok(TurnState::Pause),
            "Gap" => Ok(TurnState::Gap),
            other => Err(format!("unknown turn state {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub state: TurnState,
    pub start_s: f64,
}

/// Maximal same-state segments given by their start times.
///
/// Serializes as the label-file document
/// `{"duration_s": .., "segments": [{"state": .., "start_s": ..}, ..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTrack {
    #[serde(rename = "duration_s")]
    pub total_duration_s: f64,
    #[serde(rename = "segments")]
    pub entries: Vec<Segment>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("track has no segments but a duration of {0} s")]
    Empty(f64),
    #[error("segment {index} has a non-finite time")]
    NonFinite { index: usize },
    #[error("first segment starts at {start_s} s instead of 0")]
    FirstStartNonZero { start_s: f64 },
    #[error("segment {index} does not start after segment {}", index - 1)]
    NotIncreasing { index: usize },
    #[error("segment {index} repeats the state of its predecessor")]
    AdjacentDuplicate { index: usize },
    #[error("segment {index} starts at or after the track end")]
    StartBeyondEnd { index: usize },
}

impl SegmentTrack {
    pub fn new(entries: Vec<Segment>, total_duration_s: f64) -> Result<Self, TrackError> {
        let track = Self { total_duration_s, entries };
        validate_track(&track)?;
        Ok(track)
    }

    pub fn from_pairs(pairs: &[(TurnState, f64)], total_duration_s: f64) -> Result<Self, TrackError> {
        Self::new(pairs.iter().map(|&(state, start_s)| Segment { state, start_s }).collect(), total_duration_s)
    }

    pub fn empty() -> Self {
        Self { total_duration_s: 0.0, entries: Vec::new() }
    }

    /// `(state, start, end)` triples.
    pub fn spans(&self) -> impl Iterator<Item = (TurnState, f64, f64)> + '_ {
        self.entries.iter().enumerate().map(move |(i, seg)| {
            let end = self.entries.get(i + 1).map_or(self.total_duration_s, |next| next.start_s);
            (seg.state, seg.start_s, end)
        })
    }

    pub fn last_state(&self) -> Option<TurnState> {
        self.entries.last().map(|s| s.state)
    }

    pub fn contains(&self, state: TurnState) -> bool {
        self.entries.iter().any(|s| s.state == state)
    }

    pub fn count(&self, state: TurnState) -> usize {
        self.entries.iter().filter(|s| s.state == state).count()
    }

    /// Builds a track from possibly non-maximal `(state, start, end)` pieces,
    /// dropping empty pieces and merging equal neighbours.
    pub fn from_pieces(pieces: impl IntoIterator<Item = (TurnState, f64, f64)>) -> Result<Self, TrackError> {
        let mut entries: Vec<Segment> = Vec::new();
        let mut end = 0.0;
        for (state, start, stop) in pieces {
            if stop - start <= TIME_EPS {
                continue;
            }
            if entries.last().map(|s| s.state) != Some(state) {
                entries.push(Segment { state, start_s: start });
            }
            end = stop;
        }
        Self::new(entries, end)
    }
}

/// Checks every [`SegmentTrack`] invariant, reporting the first violation.
pub fn validate_track(track: &SegmentTrack) -> Result<(), TrackError> {
    let entries = &track.entries;
    if entries.is_empty() {
        return if track.total_duration_s == 0.0 { Ok(()) } else { Err(TrackError::Empty(track.total_duration_s)) };
    }
    for (index, seg) in entries.iter().enumerate() {
        if !seg.start_s.is_finite() {
            return Err(TrackError::NonFinite { index });
        }
    }
    if !track.total_duration_s.is_finite() {
        return Err(TrackError::NonFinite { index: entries.len() });
    }
    if entries[0].start_s != 0.0 {
        return Err(TrackError::FirstStartNonZero { start_s: entries[0].start_s });
    }
    for index in 1..entries.len() {
        if entries[index].start_s <= entries[index - 1].start_s {
            return Err(TrackError::NotIncreasing { index });
        }
        if entries[index].state == entries[index - 1].state {
            return Err(TrackError::AdjacentDuplicate { index });
        }
    }
    let last = entries.len() - 1;
    if entries[last].start_s >= track.total_duration_s {
        return Err(TrackError::StartBeyondEnd { index: last });
    }
    Ok(())
}

/// One label per decision step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameTrack {
    pub labels: Vec<TurnState>,
    pub step_ms: u32,
}

impl FrameTrack {
    pub fn new(labels: Vec<TurnState>) -> Self {
        Self { labels, step_ms: STEP_MS }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::TurnState::*;
    use super::*;

    #[test]
    fn validate_accepts_single_segment() {
        let t = SegmentTrack { total_duration_s: 1.0, entries: vec![Segment { state: SU, start_s: 0.0 }] };
        assert_eq!(validate_track(&t), Ok(()));
    }

    #[test]
    fn validate_reports_each_violation() {
        let dup = SegmentTrack {
            total_duration_s: 1.0,
            entries: vec![Segment { state: SU, start_s: 0.0 }, Segment { state: SU, start_s: 0.5 }],
        };
        assert_eq!(validate_track(&dup), Err(TrackError::AdjacentDuplicate { index: 1 }));

        let late = SegmentTrack { total_duration_s: 1.0, entries: vec![Segment { state: SU, start_s: 0.5 }] };
        assert_eq!(validate_track(&late), Err(TrackError::FirstStartNonZero { start_s: 0.5 }));

        let backwards = SegmentTrack {
            total_duration_s: 1.0,
            entries: vec![
                Segment { state: SU, start_s: 0.0 },
                Segment { state: Gap, start_s: 0.5 },
                Segment { state: SU, start_s: 0.5 },
            ],
        };
        assert_eq!(validate_track(&backwards), Err(TrackError::NotIncreasing { index: 2 }));

        let past_end = SegmentTrack {
            total_duration_s: 1.0,
            entries: vec![Segment { state: SU, start_s: 0.0 }, Segment { state: Gap, start_s: 1.0 }],
        };
        assert_eq!(validate_track(&past_end), Err(TrackError::StartBeyondEnd { index: 1 }));

        let empty = SegmentTrack { total_duration_s: 2.0, entries: vec![] };
        assert_eq!(validate_track(&empty), Err(TrackError::Empty(2.0)));
        assert_eq!(validate_track(&SegmentTrack::empty()), Ok(()));

        let nan = SegmentTrack { total_duration_s: 1.0, entries: vec![Segment { state: SU, start_s: f64::NAN }] };
        assert_eq!(validate_track(&nan), Err(TrackError::NonFinite { index: 0 }));
    }

    #[test]
    fn label_file_json_shape() {
        let t = SegmentTrack::from_pairs(&[(SU, 0.0), (Gap, 2.0)], 3.0).unwrap();
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, r#"{"duration_s":3.0,"segments":[{"state":"SU","start_s":0.0},{"state":"Gap","start_s":2.0}]}"#);
        let back: SegmentTrack = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn from_pieces_merges_and_drops_empty() {
        let t = SegmentTrack::from_pieces([(SU, 0.0, 1.0), (SU, 1.0, 1.5), (Pause, 1.5, 1.5), (Gap, 1.5, 2.0)]).unwrap();
        assert_eq!(t, SegmentTrack::from_pairs(&[(SU, 0.0), (Gap, 1.5)], 2.0).unwrap());
    }
}
