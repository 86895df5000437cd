use super::{FrameTrack, Segment, SegmentTrack, TrackError, TurnState, TIME_EPS};

/// Converts a segment track to one label per `step_ms`, choosing the state
/// with the largest overlap in each step. Exact ties go to the later segment.
pub fn rasterize(track: &SegmentTrack, step_ms: u32) -> Result<FrameTrack, TrackError> {
    super::validate_track(track)?;
    assert!(step_ms > 0, "step_ms must be positive");
    let step = step_ms as f64 / 1000.0;
    let n_steps = (track.total_duration_s / step + TIME_EPS).floor() as usize;
    let spans: Vec<(TurnState, f64, f64)> = track.spans().collect();

    let mut labels = Vec::with_capacity(n_steps);
    let mut first = 0;
    for i in 0..n_steps {
        let (lo, hi) = (i as f64 * step, (i + 1) as f64 * step);
        while first + 1 < spans.len() && spans[first].2 <= lo {
            first += 1;
        }
        // per-state overlap totals, with the start of the latest contributing segment
        let mut totals: Vec<(TurnState, f64, f64)> = Vec::with_capacity(3);
        for &(state, start, end) in &spans[first..] {
            if start >= hi {
                break;
            }
            let overlap = end.min(hi) - start.max(lo);
            if overlap <= 0.0 {
                continue;
            }
            match totals.iter_mut().find(|t| t.0 == state) {
                Some(t) => {
                    t.1 += overlap;
                    t.2 = start;
                }
                None => totals.push((state, overlap, start)),
            }
        }
        let mut best: Option<(TurnState, f64, f64)> = None;
        for t in totals {
            best = match best {
                None => Some(t),
                Some(b) if t.1 > b.1 + TIME_EPS => Some(t),
                Some(b) if (t.1 - b.1).abs() <= TIME_EPS && t.2 > b.2 => Some(t),
                keep => keep,
            };
        }
        labels.push(best.expect("every step overlaps some segment").0);
    }
    Ok(FrameTrack { labels, step_ms })
}

/// Run-length encodes a frame track back into maximal segments.
pub fn segments_from_frames(frames: &FrameTrack) -> SegmentTrack {
    let step = frames.step_ms as f64 / 1000.0;
    let mut entries: Vec<Segment> = Vec::new();
    for (i, &state) in frames.labels.iter().enumerate() {
        if entries.last().map(|s| s.state) != Some(state) {
            entries.push(Segment { state, start_s: i as f64 * step });
        }
    }
    SegmentTrack { total_duration_s: frames.labels.len() as f64 * step, entries }
}
