//! Speculative end-turn detection.
//!
//! A light streaming classifier labels every 100 ms step as speech (SU) or
//! silence; each silence run is escalated once to a heavier classifier that
//! decides between a Pause (the speaker will continue) and a Gap (the turn
//! has ended).

pub mod audio;
pub mod labels;
pub mod datagen;
pub mod nn;
pub mod cascade;
pub mod wire;
pub mod eval;
pub mod cli;
