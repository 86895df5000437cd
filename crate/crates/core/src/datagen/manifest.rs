use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatagenError, Variant};
use crate::audio::{read_wav, AudioBuffer};
use crate::labels::{SegmentTrack, TurnState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    /// Relative to the manifest's directory.
    pub wav_path: PathBuf,
    pub label_path: PathBuf,
    pub variant: Variant,
    pub duration_s: f64,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VariantStats {
    pub n_samples: usize,
    pub total_duration_s: f64,
    pub mean_duration_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_samples: usize,
    pub total_duration_s: f64,
    pub mean_duration_s: f64,
    pub per_variant: BTreeMap<Variant, VariantStats>,
    /// Number of segments of each state across all label files.
    pub segments: BTreeMap<TurnState, usize>,
}

impl CorpusStats {
    /// Recomputes statistics from entries and their tracks, in entry order.
    pub fn compute<'a>(items: impl IntoIterator<Item = (&'a ManifestEntry, &'a SegmentTrack)>) -> Self {
        let mut stats = CorpusStats::default();
        for state in TurnState::ALL {
            stats.segments.insert(state, 0);
        }
        for (entry, track) in items {
            stats.n_samples += 1;
            stats.total_duration_s += entry.duration_s;
            let v = stats.per_variant.entry(entry.variant).or_default();
            v.n_samples += 1;
            v.total_duration_s += entry.duration_s;
            for seg in &track.entries {
                *stats.segments.get_mut(&seg.state).unwrap() += 1;
            }
        }
        let mean = |total: f64, n: usize| if n == 0 { 0.0 } else { total / n as f64 };
        stats.mean_duration_s = mean(stats.total_duration_s, stats.n_samples);
        for v in stats.per_variant.values_mut() {
            v.mean_duration_s = mean(v.total_duration_s, v.n_samples);
        }
        stats
    }
}

/// Corpus index. Paths in entries are relative to `root`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub stats: CorpusStats,
    /// Inputs skipped during import (for example recordings with too many speakers).
    #[serde(default)]
    pub skipped_inputs: usize,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn empty(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), entries: Vec::new(), stats: CorpusStats::compute([]), skipped_inputs: 0 }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatagenError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(DatagenError::io(path))?;
        let mut manifest: Manifest =
            serde_json::from_str(&text).map_err(|source| DatagenError::Json { path: path.into(), source })?;
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    /// Writes `manifest.json` into `root`, returning its path.
    pub fn save(&self) -> Result<PathBuf, DatagenError> {
        fs::create_dir_all(&self.root).map_err(DatagenError::io(&self.root))?;
        let path = self.root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(DatagenError::io(&path))?;
        Ok(path)
    }

    pub fn resolve(&self, relative: &Path) -> PathBuf {
        self.root.join(relative)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_track(&self, entry: &ManifestEntry) -> Result<SegmentTrack, DatagenError> {
        let path = self.resolve(&entry.label_path);
        let text = fs::read_to_string(&path).map_err(DatagenError::io(&path))?;
        let track: SegmentTrack =
            serde_json::from_str(&text).map_err(|source| DatagenError::Json { path: path.clone(), source })?;
        crate::labels::validate_track(&track)?;
        Ok(track)
    }

    pub fn load_audio(&self, entry: &ManifestEntry) -> Result<AudioBuffer, DatagenError> {
        Ok(read_wav(self.resolve(&entry.wav_path))?)
    }

    pub fn load_tracks(&self) -> Result<Vec<SegmentTrack>, DatagenError> {
        self.entries.iter().map(|e| self.load_track(e)).collect()
    }

    /// Statistics recomputed from the label files on disk.
    pub fn recompute_stats(&self) -> Result<CorpusStats, DatagenError> {
        let tracks = self.load_tracks()?;
        Ok(CorpusStats::compute(self.entries.iter().zip(&tracks)))
    }

    /// Keeps the entries for which `keep` holds, recomputing stats.
    pub fn retain(&self, mut keep: impl FnMut(&ManifestEntry) -> bool) -> Result<Manifest, DatagenError> {
        let entries: Vec<ManifestEntry> = self.entries.iter().filter(|e| keep(e)).cloned().collect();
        let mut out = Manifest { root: self.root.clone(), entries, stats: CorpusStats::default(), skipped_inputs: self.skipped_inputs };
        out.stats = out.recompute_stats()?;
        Ok(out)
    }

    pub fn split(&self, split: Split) -> Result<Manifest, DatagenError> {
        self.retain(|e| e.split == split)
    }

    /// Concatenates manifests sharing one root directory.
    pub fn merge(parts: &[Manifest]) -> Result<Manifest, DatagenError> {
        let Some(first) = parts.first() else {
            return Ok(Manifest::empty(""));
        };
        let mut entries = Vec::new();
        let mut skipped = 0;
        for part in parts {
            if part.root != first.root {
                return Err(DatagenError::RootMismatch(first.root.clone(), part.root.clone()));
            }
            entries.extend(part.entries.iter().cloned());
            skipped += part.skipped_inputs;
        }
        let mut out = Manifest { root: first.root.clone(), entries, stats: CorpusStats::default(), skipped_inputs: skipped };
        out.stats = out.recompute_stats()?;
        Ok(out)
    }
}
