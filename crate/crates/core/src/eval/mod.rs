//! Binary Gap/Pause classification and streaming segmentation metrics,
//! with FLOP accounting per inference mode.

mod metrics;
mod report;
mod tasks;

use thiserror::Error;

use crate::audio::FeatureError;
use crate::cascade::CascadeError;
use crate::datagen::DatagenError;
use crate::labels::{TrackError, TurnState};
use crate::nn::NnError;

pub use metrics::{binary_metrics, segmentation_metrics, BinaryReport, ClassScores, SegReport, TrackPair, SEG_CLASSES};
pub use report::{binary_table, compute_table, flops_iou_svg, seg_table};
pub use tasks::{
    binary_windows, evaluate_binary_task, BinaryWindows, evaluate_stream_task, evaluate_stream_with, load_stream_samples, ComputeReport,
    SampleOutcome, StreamMode, StreamOptions, StreamOutcome, StreamSample,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sample {sample}: {pred} predicted steps vs {truth} reference steps")]
    LengthMismatch { sample: String, pred: usize, truth: usize },
    #[error("no predictions to score")]
    Empty,
    #[error("binary labels must be pause or gap, got {0}")]
    NotSilence(TurnState),
    #[error("no sample ends in a pause or gap")]
    NoEligible,
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DatagenError),
    #[error(transparent)]
    Labels(#[from] TrackError),
    #[error(transparent)]
    Features(#[from] FeatureError),
}
