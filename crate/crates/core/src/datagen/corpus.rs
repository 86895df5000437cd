use std::fs;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{CorpusStats, Manifest, ManifestEntry, Split};
use super::{build_conversation, DatagenConfig, DatagenError, LabeledSample, Variant};
use crate::audio::{write_wav, TerminalContour, UtteranceSpec};
use crate::labels::TurnState;

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// 80/10/10 split keyed on the sample index, so earlier samples keep their
/// split when a corpus is regenerated with more samples.
pub fn split_of(index: usize) -> Split {
    match stable_hash(&(index as u64).to_le_bytes()) % 10 {
        0..=7 => Split::Train,
        8 => Split::Dev,
        _ => Split::Test,
    }
}

pub(crate) fn sample_rng(seed: u64, sample_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stable_hash(sample_id.as_bytes()).rotate_left(17))
}

fn random_utterances(config: &DatagenConfig, rng: &mut impl Rng) -> Vec<UtteranceSpec> {
    let min_count = if config.variant == Variant::Base { 1 } else { 2 };
    let count = rng.random_range(min_count..=config.max_utterances);
    // one speaker per conversation
    let base_f0 = rng.random_range(100.0..=220.0);
    let amplitude = rng.random_range(0.35..=0.8);
    (0..count)
        .map(|_| UtteranceSpec {
            duration_s: rng.random_range(config.utterance_min_s..=config.utterance_max_s),
            base_f0,
            terminal_contour: TerminalContour::Level,
            amplitude,
            seed: rng.random(),
        })
        .collect()
}

/// Synthesizes sample `index` of the corpus described by `config`.
pub fn synthesize_sample(config: &DatagenConfig, index: usize) -> Result<LabeledSample, DatagenError> {
    let sample_id = format!("{}-{index:06}", config.variant.as_str());
    let mut rng = sample_rng(config.seed, &sample_id);
    let utterances = random_utterances(config, &mut rng);
    build_conversation(&sample_id, &utterances, config, &mut rng)
}

pub(crate) fn write_sample(
    root: &std::path::Path,
    sample: &LabeledSample,
    split: Split,
) -> Result<(ManifestEntry, crate::labels::SegmentTrack), DatagenError> {
    let wav_rel = PathBuf::from("wav").join(format!("{}.wav", sample.sample_id));
    let label_rel = PathBuf::from("labels").join(format!("{}.json", sample.sample_id));
    for dir in ["wav", "labels"] {
        fs::create_dir_all(root.join(dir)).map_err(DatagenError::io(root.join(dir)))?;
    }
    write_wav(&sample.audio, root.join(&wav_rel))?;
    let label_path = root.join(&label_rel);
    let mut text = serde_json::to_string(&sample.track).expect("track serializes");
    text.push('\n');
    fs::write(&label_path, text).map_err(DatagenError::io(&label_path))?;
    let entry = ManifestEntry {
        sample_id: sample.sample_id.clone(),
        wav_path: wav_rel,
        label_path: label_rel,
        variant: sample.variant,
        duration_s: sample.audio.duration_s(),
        split,
    };
    Ok((entry, sample.track.clone()))
}

/// Generates `n_samples` conversations into `out_dir` and writes the manifest.
pub fn generate_corpus(config: &DatagenConfig) -> Result<Manifest, DatagenError> {
    config.validate()?;
    if config.variant == Variant::Real {
        return Err(DatagenError::NotSynthetic(Variant::Real));
    }
    let root = config.out_dir.clone();
    let mut entries = Vec::with_capacity(config.n_samples);
    let mut tracks = Vec::with_capacity(config.n_samples);
    for index in 0..config.n_samples {
        let sample = synthesize_sample(config, index)?;
        let (entry, track) = write_sample(&root, &sample, split_of(index))?;
        entries.push(entry);
        tracks.push(track);
    }
    let stats = CorpusStats::compute(entries.iter().zip(&tracks));
    let manifest = Manifest { root, entries, stats, skipped_inputs: 0 };
    manifest.save()?;
    log::info!("generated {} {} samples into {}", config.n_samples, config.variant.as_str(), config.out_dir.display());
    Ok(manifest)
}

/// Keeps only samples whose track has at least one Pause or Gap segment.
pub fn filter_samples(manifest: &Manifest) -> Result<Manifest, DatagenError> {
    let tracks = manifest.load_tracks()?;
    let keep: Vec<bool> = tracks.iter().map(|t| t.contains(TurnState::Pause) || t.contains(TurnState::Gap)).collect();
    let mut flags = keep.into_iter();
    manifest.retain(|_| flags.next().unwrap())
}
