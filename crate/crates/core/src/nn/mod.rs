//! From-scratch models: the light streaming SU classifier and the heavy
//! Pause/Gap window classifier, with training, gradient checks and FLOP counts.
//!
//! Everything is generic over [`Scalar`] so the same code runs in `f32` for
//! training and inference and in `f64` for finite-difference checks.

mod conv;
mod flops;
mod gradcheck;
mod gru;
mod heavy;
mod light;
mod params;
mod train;

use std::fmt::{Debug, Display};
use std::io;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::path::PathBuf;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conv::Conv2d;
pub use flops::{conv_flops, count_flops, gru_flops, linear_flops, FlopsInput};
pub use gradcheck::{grad_check, grad_check_params, toy_sample, GradCheckSample};
pub use gru::{gru_cell, GruCache, GruLayer};
pub use heavy::{heavy_forward, heavy_forward_batch, pad_window, HeavyArch, HeavyModel, MIN_WINDOW_FRAMES};
pub use light::{light_forward, LightArch, LightModel, LightStream};
pub use params::{Arch, Params};
pub(crate) use train::frame_at;
pub use train::{
    heavy_examples, light_sequences, train, AdamW, Dataset, EpochStats, HeavyExample, LightSequence, TrainConfig,
    HEAVY_SILENCE_OFFSET_S,
};

/// Floating-point element type of tensors.
pub trait Scalar:
    LinalgScalar + Float + ScalarOperand + AddAssign + SubAssign + MulAssign + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Light,
    Heavy,
}

impl ArchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::Light => "light",
            ArchKind::Heavy => "heavy",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ArchKind::Light => 1,
            ArchKind::Heavy => 2,
        }
    }
}

impl std::str::FromStr for ArchKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "light" => Ok(ArchKind::Light),
            "heavy" => Ok(ArchKind::Heavy),
            other => Err(format!("unknown arch {other:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("input too short: need at least {need} frames, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("expected {expected:?} params, found {found:?}")]
    WrongArch { expected: ArchKind, found: ArchKind },
    #[error("malformed weights file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Data(#[from] crate::datagen::DatagenError),
    #[error(transparent)]
    Features(#[from] crate::audio::FeatureError),
    #[error(transparent)]
    Labels(#[from] crate::labels::TrackError),
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Maps log-mel values to roughly unit scale before the first layer.
pub(crate) fn normalize<T: Scalar>(x: f32) -> T {
    T::from_f64((x as f64 + 8.0) / 8.0)
}
