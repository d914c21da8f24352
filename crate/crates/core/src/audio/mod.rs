//! Canonical waveform representation and audio file I/O.
//!
//! Everything in this crate operates on [`Waveform`]: stereo, f64 samples
//! with full scale at 1.0, canonically 44.1 kHz. Mono sources are promoted
//! to stereo by channel duplication at load time.

mod resample;
mod wav;

pub use resample::resample;
pub use wav::{load_wav, save_wav, wav_meta, AudioFileMeta, BitDepth, SaveStats};

use thiserror::Error;

/// Sample rate used throughout the evaluation stack.
pub const CANONICAL_SAMPLE_RATE: u32 = 44_100;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("channel length mismatch: left {left} vs right {right} samples")]
    ChannelLengthMismatch { left: usize, right: usize },
    #[error("sample rate must be > 0")]
    ZeroSampleRate,
    #[error("non-finite sample at index {index}")]
    NonFiniteSample { index: usize },
    #[error("waveform length mismatch: {a} vs {b} samples")]
    LengthMismatch { a: usize, b: usize },
    #[error("sample rate mismatch: {a} Hz vs {b} Hz")]
    SampleRateMismatch { a: u32, b: u32 },
    #[error("unsupported wav format: {0}")]
    UnsupportedFormat(String),
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A stereo sample buffer. Immutable once constructed; all mutating helpers
/// return new values so waveforms can be shared freely across workers.
///
/// Invariants (enforced at construction): both channels have equal length,
/// the sample rate is positive, and every sample is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    left: Vec<f64>,
    right: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(left: Vec<f64>, right: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if left.len() != right.len() {
            return Err(AudioError::ChannelLengthMismatch {
                left: left.len(),
                right: right.len(),
            });
        }
        if sample_rate == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        for (index, s) in left.iter().chain(right.iter()).enumerate() {
            if !s.is_finite() {
                return Err(AudioError::NonFiniteSample {
                    index: index % left.len().max(1),
                });
            }
        }
        Ok(Self { left, right, sample_rate })
    }

    /// Promote a mono buffer to stereo by duplicating the channel.
    pub fn from_mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        let right = samples.clone();
        Self::new(samples, right, sample_rate)
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            left: vec![0.0; len],
            right: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn left(&self) -> &[f64] {
        &self.left
    }

    pub fn right(&self) -> &[f64] {
        &self.right
    }

    pub fn channels(&self) -> [&[f64]; 2] {
        [&self.left, &self.right]
    }

    /// Largest absolute sample value over both channels.
    pub fn peak(&self) -> f64 {
        self.left
            .iter()
            .chain(self.right.iter())
            .fold(0.0f64, |acc, &s| acc.max(s.abs()))
    }

    /// Per-sample stereo energy `l^2 + r^2`, summed over the clip.
    pub fn energy(&self) -> f64 {
        self.left
            .iter()
            .zip(self.right.iter())
            .map(|(&l, &r)| l * l + r * r)
            .sum()
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            left: self.left.iter().map(|s| s * gain).collect(),
            right: self.right.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn add(&self, other: &Waveform) -> Result<Waveform, AudioError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Waveform) -> Result<Waveform, AudioError> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Waveform, f: impl Fn(f64, f64) -> f64) -> Result<Waveform, AudioError> {
        self.check_aligned(other)?;
        let left = self.left.iter().zip(&other.left).map(|(&a, &b)| f(a, b)).collect();
        let right = self.right.iter().zip(&other.right).map(|(&a, &b)| f(a, b)).collect();
        Ok(Waveform { left, right, sample_rate: self.sample_rate })
    }

    pub fn check_aligned(&self, other: &Waveform) -> Result<(), AudioError> {
        if self.len() != other.len() {
            return Err(AudioError::LengthMismatch { a: self.len(), b: other.len() });
        }
        if self.sample_rate != other.sample_rate {
            return Err(AudioError::SampleRateMismatch {
                a: self.sample_rate,
                b: other.sample_rate,
            });
        }
        Ok(())
    }

    /// Mix `src` into this buffer starting at `offset` samples, scaled by a
    /// linear gain. Samples of `src` that fall past the end are dropped.
    pub fn add_scaled_at(&mut self, src: &Waveform, offset: usize, gain: f64) {
        let n = src.len().min(self.len().saturating_sub(offset));
        for i in 0..n {
            self.left[offset + i] += src.left[i] * gain;
            self.right[offset + i] += src.right[i] * gain;
        }
    }

    /// Copy of the sample range `[start, end)` of both channels.
    pub fn slice(&self, start: usize, end: usize) -> Waveform {
        let end = end.min(self.len());
        let start = start.min(end);
        Waveform {
            left: self.left[start..end].to_vec(),
            right: self.right[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}
