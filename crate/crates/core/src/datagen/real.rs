use std::fs;
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{sample_rng, split_of, write_sample};
use super::manifest::{CorpusStats, Manifest};
use super::{DatagenError, LabeledSample, Variant};
use crate::audio::{read_wav, AudioBuffer};
use crate::labels::{label_from_diarization, parse_diarization, Segment, SegmentTrack};

/// Recordings with more speakers than this are skipped.
pub const MAX_SPEAKERS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImportConfig {
    pub truncate_prob: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ImportConfig {
    fn default() -> Self {
        Self { truncate_prob: 0.5, seed: 0, out_dir: PathBuf::from("real") }
    }
}

fn crop(audio: &AudioBuffer, spans: &[(f64, f64)]) -> AudioBuffer {
    let mut out = Vec::new();
    for &(a, b) in spans {
        let lo = AudioBuffer::index_of(a).min(audio.len());
        let hi = AudioBuffer::index_of(b).min(audio.len());
        out.extend_from_slice(&audio.samples()[lo..hi]);
    }
    AudioBuffer::new(out)
}

/// Cuts the sample right after the silence segment at `index`.
fn truncate_after(track: &SegmentTrack, audio: &mut AudioBuffer, index: usize) -> SegmentTrack {
    let end = track.entries.get(index + 1).map_or(track.total_duration_s, |s| s.start_s);
    audio.truncate(AudioBuffer::index_of(end));
    let entries: Vec<Segment> = track.entries[..=index].to_vec();
    SegmentTrack { total_duration_s: audio.duration_s(), entries }
}

/// Labels each speaker of each two-party recording and writes a corpus.
///
/// `pairs` holds `(diarization_file, wav_file)`; recordings with more than two
/// speakers are counted in `skipped_inputs`.
pub fn import_real(pairs: &[(PathBuf, PathBuf)], config: &ImportConfig) -> Result<Manifest, DatagenError> {
    let root = config.out_dir.clone();
    let mut entries = Vec::new();
    let mut tracks = Vec::new();
    let mut skipped = 0;
    for (diar_path, wav_path) in pairs {
        let text = fs::read_to_string(diar_path).map_err(DatagenError::io(diar_path))?;
        let diar = parse_diarization(&text).map_err(|source| DatagenError::Diarization { path: diar_path.clone(), source })?;
        let speakers = diar.speakers();
        if speakers.len() > MAX_SPEAKERS {
            log::warn!("skipping {}: {} speakers", diar_path.display(), speakers.len());
            skipped += 1;
            continue;
        }
        let audio = read_wav(wav_path)?;
        let stem = diar_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for speaker in speakers {
            let labeled = label_from_diarization(&diar, speaker, audio.duration_s())
                .map_err(|source| DatagenError::Diarization { path: diar_path.clone(), source })?;
            let mut cropped = crop(&audio, &labeled.kept_spans);
            let mut track = labeled.track;
            // span edges were rounded to samples
            track.total_duration_s = cropped.duration_s();

            let sample_id = format!("real-{stem}-{speaker}");
            let mut rng = sample_rng(config.seed, &sample_id);
            let silences: Vec<usize> =
                track.entries.iter().enumerate().filter(|(_, s)| s.state.is_silence()).map(|(i, _)| i).collect();
            if !silences.is_empty() && rng.random::<f64>() < config.truncate_prob {
                let pick = silences[rng.random_range(0..silences.len())];
                track = truncate_after(&track, &mut cropped, pick);
            }
            let sample = LabeledSample { sample_id, variant: Variant::Real, audio: cropped, track };
            let (entry, track) = write_sample(&root, &sample, split_of(entries.len()))?;
            entries.push(entry);
            tracks.push(track);
        }
    }
    let stats = CorpusStats::compute(entries.iter().zip(&tracks));
    let manifest = Manifest { root, entries, stats, skipped_inputs: skipped };
    manifest.save()?;
    Ok(manifest)
}
