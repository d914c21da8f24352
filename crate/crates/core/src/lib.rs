//! Evaluation toolkit for three-stem cinematic audio separation.
//!
//! The crate covers the full loop around a separator without containing
//! one: scoring estimates against references with a stereo global SDR,
//! ranking submissions and tracing leaderboard overfitting, signal-level
//! post-processing of estimates, dataset signal statistics (loudness, EQ,
//! panning, dynamic-range proxies), matching one dataset's statistics to
//! another's, and simulating DnR-style mixtures from isolated assets.
//!
//! Everything operates on the stereo [`audio::Waveform`] type at a
//! canonical 44.1 kHz sample rate.

pub mod adapt;
pub mod audio;
pub mod harness;
pub mod metrics;
pub mod mixer;
pub mod postprocess;
pub mod sigstats;
pub mod synth;
