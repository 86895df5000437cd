//! Converts a segment track to 100 ms frame labels and back.

use etd_core::labels::{rasterize, segments_from_frames, SegmentTrack, TurnState, STEP_MS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    use TurnState::*;
    // boundaries on the 100 ms grid, written as step counts
    let step = STEP_MS as f64 / 1000.0;
    let pairs: Vec<_> = [(SU, 0), (Pause, 14), (SU, 32), (Gap, 45)].iter().map(|&(s, k)| (s, k as f64 * step)).collect();
    let track = SegmentTrack::from_pairs(&pairs, 60.0 * step)?;
    let frames = rasterize(&track, STEP_MS)?;
    let line: String = frames.labels.iter().map(|s| s.as_str().chars().next().unwrap()).collect();
    println!("{} frames: {line}", frames.len());
    let back = segments_from_frames(&frames);
    println!("round trip equal: {}", back == track);
    println!("{}", serde_json::to_string(&back)?);
    Ok(())
}
