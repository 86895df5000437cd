use std::collections::BTreeSet;

use thiserror::Error;

use super::{SegmentTrack, TrackError, TurnState, TIME_EPS};

/// Silences shorter than this between one speaker's fragments are folded into the SU.
pub const MIN_SILENCE_S: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct DiarizationTurn {
    pub speaker: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// Speech intervals of one recording, sorted by start and non-overlapping.
#[derive(Debug, Clone, PartialEq)]
pub struct DiarizationTrack {
    turns: Vec<DiarizationTurn>,
}

#[derive(Debug, Error, PartialEq)]
pub enum DiarizationError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("turn {index} has invalid bounds {start_s}..{end_s}")]
    InvalidBounds { index: usize, start_s: f64, end_s: f64 },
    #[error("turns overlap: {first} ends at {end_s} s after {second} starts at {start_s} s")]
    Overlap { first: String, second: String, end_s: f64, start_s: f64 },
    #[error("turn ends at {end_s} s, past the recording end {total_s} s")]
    PastEnd { end_s: f64, total_s: f64 },
    #[error("speaker {0:?} does not appear in the diarization")]
    UnknownSpeaker(String),
    #[error(transparent)]
    Track(#[from] TrackError),
}

impl DiarizationTrack {
    /// Sorts `turns` by start time and rejects invalid or overlapping intervals.
    pub fn new(mut turns: Vec<DiarizationTurn>) -> Result<Self, DiarizationError> {
        turns.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        for (index, t) in turns.iter().enumerate() {
            if !(t.start_s.is_finite() && t.end_s.is_finite() && t.start_s >= 0.0 && t.start_s < t.end_s) {
                return Err(DiarizationError::InvalidBounds { index, start_s: t.start_s, end_s: t.end_s });
            }
        }
        for pair in turns.windows(2) {
            if pair[1].start_s < pair[0].end_s - TIME_EPS {
                return Err(DiarizationError::Overlap {
                    first: pair[0].speaker.clone(),
                    second: pair[1].speaker.clone(),
                    end_s: pair[0].end_s,
                    start_s: pair[1].start_s,
                });
            }
        }
        Ok(Self { turns })
    }

    pub fn turns(&self) -> &[DiarizationTurn] {
        &self.turns
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.turns.iter().map(|t| t.speaker.as_str()).collect()
    }

    pub fn end_s(&self) -> f64 {
        self.turns.iter().map(|t| t.end_s).fold(0.0, f64::max)
    }
}

/// Parses `speaker<TAB>start_s<TAB>end_s` lines. Blank lines are ignored.
pub fn parse_diarization(text: &str) -> Result<DiarizationTrack, DiarizationError> {
    let mut turns = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 3 {
            return Err(DiarizationError::Malformed {
                line,
                reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let num = |s: &str, what: &str| {
            s.trim().parse::<f64>().map_err(|_| DiarizationError::Malformed {
                line,
                reason: format!("{what} {s:?} is not a number"),
            })
        };
        turns.push(DiarizationTurn {
            speaker: fields[0].to_string(),
            start_s: num(fields[1], "start")?,
            end_s: num(fields[2], "end")?,
        });
    }
    DiarizationTrack::new(turns)
}

/// Labels for one target speaker together with the source-time spans they cover.
///
/// The track's timeline is the concatenation of `kept_spans`; callers crop the
/// audio to the same spans.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetLabels {
    pub track: SegmentTrack,
    pub kept_spans: Vec<(f64, f64)>,
}

/// Derives the target speaker's SU/Pause/Gap track.
///
/// Same-speaker silences under [`MIN_SILENCE_S`] merge into the surrounding SU;
/// longer ones are Pause. A silence followed by another speaker (or by the end
/// of the recording) is a Gap, after which the timeline skips ahead to the
/// target's next turn. Leading silence is cropped.
pub fn label_from_diarization(
    diar: &DiarizationTrack,
    target: &str,
    total_duration_s: f64,
) -> Result<TargetLabels, DiarizationError> {
    let turns = diar.turns();
    if !turns.iter().any(|t| t.speaker == target) {
        return Err(DiarizationError::UnknownSpeaker(target.to_string()));
    }
    if let Some(last) = turns.iter().find(|t| t.end_s > total_duration_s + TIME_EPS) {
        return Err(DiarizationError::PastEnd { end_s: last.end_s, total_s: total_duration_s });
    }

    let mut shifted: Vec<(TurnState, f64, f64)> = Vec::new();
    let mut kept_spans: Vec<(f64, f64)> = Vec::new();
    // pieces of the span being built, in source time
    let mut open: Vec<(TurnState, f64, f64)> = Vec::new();
    let mut offset = 0.0;
    for (i, turn) in turns.iter().enumerate() {
        if turn.speaker != target {
            continue;
        }
        open.push((TurnState::SU, turn.start_s, turn.end_s));
        let next = turns.get(i + 1);
        let silence_end = next.map_or(total_duration_s, |n| n.start_s);
        match next {
            Some(n) if n.speaker == target => {
                let short = silence_end - turn.end_s < MIN_SILENCE_S - TIME_EPS;
                let state = if short { TurnState::SU } else { TurnState::Pause };
                open.push((state, turn.end_s, silence_end));
            }
            _ => {
                open.push((TurnState::Gap, turn.end_s, silence_end));
                let span_start = open[0].1;
                let shift = offset - span_start;
                shifted.extend(open.drain(..).map(|(st, a, b)| (st, a + shift, b + shift)));
                kept_spans.push((span_start, silence_end));
                offset += silence_end - span_start;
            }
        }
    }
    let track = SegmentTrack::from_pieces(shifted)?;
    Ok(TargetLabels { track, kept_spans })
}
