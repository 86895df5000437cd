//! Derives one speaker's turn labels from a two-party diarization.

use etd_core::labels::{label_from_diarization, parse_diarization};

const DIARIZATION: &str = "A\t0.5\t2.0\nA\t2.1\t3.0\nA\t4.2\t6.0\nB\t6.8\t9.0\nA\t9.5\t11.0\n";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let diar = parse_diarization(DIARIZATION)?;
    let labels = label_from_diarization(&diar, "A", 12.0)?;
    println!("kept source spans: {:?}", labels.kept_spans);
    for (state, start, end) in labels.track.spans() {
        println!("  {:<5} {start:6.2} .. {end:6.2} s", state.as_str());
    }
    Ok(())
}
