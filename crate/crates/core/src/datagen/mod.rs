//! Labeled corpus construction: synthetic conversations in three styles and
//! import of real recordings from diarization output.

mod conversation;
mod corpus;
mod manifest;
mod real;

use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{SynthError, WavError};
use crate::labels::{DiarizationError, TrackError};

pub use conversation::{build_conversation, LabeledSample};
pub use corpus::{filter_samples, generate_corpus, split_of, stable_hash, synthesize_sample};
pub use manifest::{CorpusStats, Manifest, ManifestEntry, Split, VariantStats};
pub use real::{import_real, ImportConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Utterances back to back, followed by the end of the turn.
    Base,
    /// A long pause inserted between utterances.
    WithPause,
    /// A filler token followed by a long pause.
    WithFiller,
    /// Imported from a diarized recording.
    Real,
}

impl Variant {
    pub const SYNTHETIC: [Variant; 3] = [Variant::Base, Variant::WithPause, Variant::WithFiller];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::WithPause => "with_pause",
            Variant::WithFiller => "with_filler",
            Variant::Real => "real",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(Variant::Base),
            "with_pause" => Ok(Variant::WithPause),
            "with_filler" => Ok(Variant::WithFiller),
            "real" => Ok(Variant::Real),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatagenConfig {
    pub variant: Variant,
    pub n_samples: usize,
    pub pause_min_s: f64,
    pub pause_max_s: f64,
    pub truncate_prob: f64,
    pub filler_duration_ms: f64,
    /// Silence appended after the final utterance, labeled Gap.
    pub trailing_gap_s: f64,
    pub utterance_min_s: f64,
    pub utterance_max_s: f64,
    pub max_utterances: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            variant: Variant::WithPause,
            n_samples: 100,
            pause_min_s: 1.5,
            pause_max_s: 3.0,
            truncate_prob: 0.5,
            filler_duration_ms: 250.0,
            trailing_gap_s: 1.0,
            utterance_min_s: 0.8,
            utterance_max_s: 2.0,
            max_utterances: 3,
            seed: 0,
            out_dir: PathBuf::from("corpus"),
        }
    }
}

impl DatagenConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |what: &str| Err(DatagenError::Config(what.to_string()));
        if !(self.pause_min_s > 0.0 && self.pause_min_s <= self.pause_max_s) {
            return bad("need 0 < pause_min_s <= pause_max_s");
        }
        if !(0.0..=1.0).contains(&self.truncate_prob) {
            return bad("truncate_prob must lie in [0, 1]");
        }
        if !(self.filler_duration_ms > 0.0) {
            return bad("filler_duration_ms must be positive");
        }
        if !(self.trailing_gap_s > 0.0) {
            return bad("trailing_gap_s must be positive");
        }
        if !(0.3 <= self.utterance_min_s && self.utterance_min_s <= self.utterance_max_s && self.utterance_max_s <= 30.0) {
            return bad("utterance durations must satisfy 0.3 <= min <= max <= 30");
        }
        if self.max_utterances < 2 {
            return bad("max_utterances must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid datagen config: {0}")]
    Config(String),
    #[error("a conversation needs at least one utterance")]
    NoUtterances,
    #[error("variant {0:?} cannot be synthesized")]
    NotSynthetic(Variant),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error("{path}: {source}")]
    Diarization {
        path: PathBuf,
        #[source]
        source: DiarizationError,
    },
    #[error("manifest roots differ: {0} vs {1}")]
    RootMismatch(PathBuf, PathBuf),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl DatagenError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> DatagenError {
        let path = path.into();
        move |source| DatagenError::Io { path, source }
    }
}
