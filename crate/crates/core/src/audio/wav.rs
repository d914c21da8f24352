//! RIFF/WAVE reading and writing: PCM16, PCM24, and IEEE float32,
//! 1 or 2 channels, little-endian.

use std::path::{Path, PathBuf};

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioError, Waveform};

/// Sample encoding of a WAV file on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Pcm16,
    Pcm24,
    Float32,
}

impl BitDepth {
    fn spec(self, channels: u16, sample_rate: u32) -> WavSpec {
        let (bits, format) = match self {
            BitDepth::Pcm16 => (16, SampleFormat::Int),
            BitDepth::Pcm24 => (24, SampleFormat::Int),
            BitDepth::Float32 => (32, SampleFormat::Float),
        };
        WavSpec {
            channels,
            sample_rate,
            bits_per_sample: bits,
            sample_format: format,
        }
    }
}

/// Header-level description of a WAV file.
#[derive(Debug, Clone)]
pub struct AudioFileMeta {
    pub path: PathBuf,
    pub channels: u16,
    pub bit_depth: BitDepth,
    pub duration_samples: usize,
    pub sample_rate: u32,
}

/// What happened while writing, beyond success: how many samples had to be
/// clamped into the integer range.
#[derive(Debug, Clone, Copy, Default)]
pub struct SaveStats {
    pub clipped_samples: usize,
}

fn supported_depth(spec: &WavSpec) -> Result<BitDepth, AudioError> {
    match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => Ok(BitDepth::Pcm16),
        (SampleFormat::Int, 24) => Ok(BitDepth::Pcm24),
        (SampleFormat::Float, 32) => Ok(BitDepth::Float32),
        (format, bits) => Err(AudioError::UnsupportedFormat(format!(
            "{bits}-bit {format:?} (want PCM16, PCM24, or float32)"
        ))),
    }
}

pub fn wav_meta(path: impl AsRef<Path>) -> Result<AudioFileMeta, AudioError> {
    let path = path.as_ref();
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{} channels (want 1 or 2)",
            spec.channels
        )));
    }
    Ok(AudioFileMeta {
        path: path.to_path_buf(),
        channels: spec.channels,
        bit_depth: supported_depth(&spec)?,
        duration_samples: (reader.len() / spec.channels as u32) as usize,
        sample_rate: spec.sample_rate,
    })
}

/// Load a WAV file. Integer samples are scaled to [-1, 1) by 2^(bits-1);
/// mono files come back as two identical channels.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform, AudioError> {
    let mut reader = WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{} channels (want 1 or 2)",
            spec.channels
        )));
    }
    let depth = supported_depth(&spec)?;

    let interleaved: Vec<f64> = match depth {
        BitDepth::Float32 => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        BitDepth::Pcm16 => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32_768.0))
            .collect::<Result<_, _>>()?,
        BitDepth::Pcm24 => reader
            .samples::<i32>()
            .map(|s| s.map(|v| v as f64 / 8_388_608.0))
            .collect::<Result<_, _>>()?,
    };

    let (left, right) = match spec.channels {
        1 => {
            let right = interleaved.clone();
            (interleaved, right)
        }
        _ => {
            let mut left = Vec::with_capacity(interleaved.len() / 2);
            let mut right = Vec::with_capacity(interleaved.len() / 2);
            for frame in interleaved.chunks_exact(2) {
                left.push(frame[0]);
                right.push(frame[1]);
            }
            (left, right)
        }
    };
    Waveform::new(left, right, spec.sample_rate)
}

/// Write a stereo WAV file at the given bit depth.
///
/// With an integer depth, samples outside the representable range are
/// clamped; the count of clamped samples is returned and logged. Float32
/// writes samples as-is (rounded to f32).
pub fn save_wav(
    waveform: &Waveform,
    path: impl AsRef<Path>,
    bit_depth: BitDepth,
) -> Result<SaveStats, AudioError> {
    let path = path.as_ref();
    let spec = bit_depth.spec(2, waveform.sample_rate());
    let mut writer = WavWriter::create(path, spec)?;
    let mut stats = SaveStats::default();

    match bit_depth {
        BitDepth::Float32 => {
            for i in 0..waveform.len() {
                writer.write_sample(waveform.left()[i] as f32)?;
                writer.write_sample(waveform.right()[i] as f32)?;
            }
        }
        BitDepth::Pcm16 => {
            for i in 0..waveform.len() {
                let l = quantize(waveform.left()[i], 32_768.0, &mut stats);
                let r = quantize(waveform.right()[i], 32_768.0, &mut stats);
                writer.write_sample(l as i16)?;
                writer.write_sample(r as i16)?;
            }
        }
        BitDepth::Pcm24 => {
            for i in 0..waveform.len() {
                let l = quantize(waveform.left()[i], 8_388_608.0, &mut stats);
                let r = quantize(waveform.right()[i], 8_388_608.0, &mut stats);
                writer.write_sample(l)?;
                writer.write_sample(r)?;
            }
        }
    }
    writer.finalize()?;

    if stats.clipped_samples > 0 {
        log::warn!(
            "{}: clamped {} sample(s) outside the integer range",
            path.display(),
            stats.clipped_samples
        );
    }
    Ok(stats)
}

fn quantize(sample: f64, full_scale: f64, stats: &mut SaveStats) -> i32 {
    let raw = (sample * full_scale).round();
    let max = full_scale - 1.0;
    let min = -full_scale;
    if raw > max || raw < min {
        stats.clipped_samples += 1;
        raw.clamp(min, max) as i32
    } else {
        raw as i32
    }
}
