//! Spectral analyses: magnitude spectrograms, dataset EQ curves, and the
//! stereo panning spectrum Ψ(f)/Δ(f).

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;

use super::loudness::normalize_loudness;
use super::SigStatsError;

/// Analysis framing: 4096-sample Hann window, 75% overlap.
pub const EQ_FFT_SIZE: usize = 4096;
pub const EQ_HOP: usize = 1024;
/// All EQ curves are measured after normalizing each clip to this level.
pub const EQ_NORM_LUFS: f64 = -24.0;
/// T-F cells whose pooled energy |X_L|² + |X_R|² falls below this are
/// treated as silence and excluded from panning averages.
pub const PANNING_ENERGY_FLOOR: f64 = 1e-12;
/// Magnitudes are floored here before taking dB so silence stays finite.
const MAG_DB_FLOOR: f64 = 1e-12;

/// Per-channel magnitude frames; bins = fft_size/2 + 1.
#[derive(Debug, Clone)]
pub struct MagnitudeSpectrogram {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    /// frames[channel][frame][bin]
    pub frames: [Vec<Vec<f64>>; 2],
}

impl MagnitudeSpectrogram {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frame_count(&self) -> usize {
        self.frames[0].len()
    }

    pub fn bin_freq_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.fft_size as f64
    }
}

/// Hann-windowed magnitude spectrogram of both channels.
pub fn magnitude_spectrogram(
    x: &Waveform,
    fft_size: usize,
    hop: usize,
) -> Result<MagnitudeSpectrogram, SigStatsError> {
    if x.len() < fft_size {
        return Err(SigStatsError::TooShort { needed: fft_size, got: x.len() });
    }
    let window: Vec<f64> = (0..fft_size)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / fft_size as f64).cos()))
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let frame_count = (x.len() - fft_size) / hop + 1;
    let bins = fft_size / 2 + 1;

    let mut frames = [Vec::with_capacity(frame_count), Vec::with_capacity(frame_count)];
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for (ch, samples) in [(0usize, x.left()), (1, x.right())] {
        for f in 0..frame_count {
            let start = f * hop;
            for n in 0..fft_size {
                buf[n] = Complex::new(samples[start + n] * window[n], 0.0);
            }
            fft.process(&mut buf);
            frames[ch].push(buf[..bins].iter().map(|c| c.norm()).collect());
        }
    }
    Ok(MagnitudeSpectrogram {
        sample_rate: x.sample_rate(),
        fft_size,
        hop,
        frames,
    })
}

/// A mean ± std magnitude curve in dB on an explicit frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqCurve {
    pub freqs_hz: Vec<f64>,
    pub mean_db: Vec<f64>,
    pub std_db: Vec<f64>,
}

impl EqCurve {
    pub fn bins(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn same_grid(&self, other: &EqCurve) -> bool {
        self.freqs_hz == other.freqs_hz
    }
}

/// One clip's EQ measurement: loudness-normalize, spectrogram, per-bin dB
/// of the time-averaged magnitude with channels averaged.
pub(crate) fn clip_eq_db(clip: &Waveform) -> Result<Vec<f64>, SigStatsError> {
    let (normalized, _) = normalize_loudness(clip, EQ_NORM_LUFS)?;
    let spec = magnitude_spectrogram(&normalized, EQ_FFT_SIZE, EQ_HOP)?;
    let bins = spec.bins();
    let frames = spec.frame_count() as f64;
    let mut out = Vec::with_capacity(bins);
    for k in 0..bins {
        let mut sum = 0.0;
        for ch in 0..2 {
            for frame in &spec.frames[ch] {
                sum += frame[k];
            }
        }
        let avg = sum / (2.0 * frames);
        out.push(20.0 * avg.max(MAG_DB_FLOOR).log10());
    }
    Ok(out)
}

/// Average equalization curve of a set of clips: per-clip dB curves,
/// mean and std taken across clips in the dB domain.
pub fn eq_curve(clips: &[Waveform]) -> Result<EqCurve, SigStatsError> {
    use rayon::prelude::*;

    if clips.is_empty() {
        return Err(SigStatsError::EmptyInput);
    }
    let rate = clips[0].sample_rate();
    for c in clips {
        if c.sample_rate() != rate {
            return Err(SigStatsError::RateMismatch { a: rate, b: c.sample_rate() });
        }
    }
    let curves: Vec<Vec<f64>> = clips
        .par_iter()
        .map(clip_eq_db)
        .collect::<Result<_, _>>()?;

    let bins = curves[0].len();
    let n = curves.len() as f64;
    let mut mean_db = vec![0.0; bins];
    for curve in &curves {
        for (m, v) in mean_db.iter_mut().zip(curve) {
            *m += v / n;
        }
    }
    let mut std_db = vec![0.0; bins];
    for curve in &curves {
        for (s, (v, m)) in std_db.iter_mut().zip(curve.iter().zip(&mean_db)) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut std_db {
        *s = s.sqrt();
    }
    let freqs_hz = (0..bins)
        .map(|k| k as f64 * rate as f64 / EQ_FFT_SIZE as f64)
        .collect();
    Ok(EqCurve { freqs_hz, mean_db, std_db })
}

/// Stereo panning summary per frequency bin.
///
/// Ψ = 2·|X_L||X_R| / (|X_L|² + |X_R|²) — 1 for centered content, → 0 for
/// hard panning. Δ is the per-cell sign of |X_R| − |X_L| (equivalently the
/// sign of Ψ_L − Ψ_R), averaged to [−1, 1]; negative means panned left.
/// Bins where every cell fell below the energy floor have `support` 0 and
/// NaN statistics.
#[derive(Debug, Clone)]
pub struct PanningSpectrum {
    pub freqs_hz: Vec<f64>,
    pub psi_mean: Vec<f64>,
    pub psi_std: Vec<f64>,
    pub delta_mean: Vec<f64>,
    pub delta_std: Vec<f64>,
    pub support: Vec<usize>,
}

impl PanningSpectrum {
    pub fn bins(&self) -> usize {
        self.freqs_hz.len()
    }

    /// Iterate bins that had at least one retained cell:
    /// (freq_hz, psi_mean, delta_mean).
    pub fn reported(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.bins())
            .filter(|&k| self.support[k] > 0)
            .map(|k| (self.freqs_hz[k], self.psi_mean[k], self.delta_mean[k]))
    }
}

pub fn panning_spectrum(x: &Waveform) -> Result<PanningSpectrum, SigStatsError> {
    let spec = magnitude_spectrogram(x, EQ_FFT_SIZE, EQ_HOP)?;
    let bins = spec.bins();
    let frames = spec.frame_count();

    let mut psi_mean = vec![f64::NAN; bins];
    let mut psi_std = vec![f64::NAN; bins];
    let mut delta_mean = vec![f64::NAN; bins];
    let mut delta_std = vec![f64::NAN; bins];
    let mut support = vec![0usize; bins];

    for k in 0..bins {
        let mut psis = Vec::with_capacity(frames);
        let mut deltas = Vec::with_capacity(frames);
        for f in 0..frames {
            let a = spec.frames[0][f][k];
            let b = spec.frames[1][f][k];
            let energy = a * a + b * b;
            if energy < PANNING_ENERGY_FLOOR {
                continue;
            }
            psis.push(2.0 * a * b / energy);
            deltas.push(if b > a {
                1.0
            } else if b < a {
                -1.0
            } else {
                0.0
            });
        }
        if psis.is_empty() {
            continue;
        }
        support[k] = psis.len();
        let n = psis.len() as f64;
        let pm = psis.iter().sum::<f64>() / n;
        let dm = deltas.iter().sum::<f64>() / n;
        psi_mean[k] = pm;
        delta_mean[k] = dm;
        psi_std[k] = (psis.iter().map(|v| (v - pm) * (v - pm)).sum::<f64>() / n).sqrt();
        delta_std[k] = (deltas.iter().map(|v| (v - dm) * (v - dm)).sum::<f64>() / n).sqrt();
    }

    let freqs_hz = (0..bins).map(|k| spec.bin_freq_hz(k)).collect();
    Ok(PanningSpectrum {
        freqs_hz,
        psi_mean,
        psi_std,
        delta_mean,
        delta_std,
        support,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn mono_sine(freq: f64, amp: f64, rate: u32, len: usize) -> Waveform {
        let s: Vec<f64> = (0..len)
            .map(|n| amp * (2.0 * std::f64::consts::PI * freq * n as f64 / rate as f64).sin())
            .collect();
        Waveform::from_mono(s, rate).unwrap()
    }

    fn noise(seed: u64, len: usize) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()
    }

    #[test]
    fn sine_peaks_at_bin_93() {
        let x = mono_sine(1000.0, 0.8, 44_100, 8192);
        let spec = magnitude_spectrogram(&x, 4096, 1024).unwrap();
        let frame = &spec.frames[0][0];
        let argmax = (0..frame.len()).max_by(|&a, &b| frame[a].total_cmp(&frame[b])).unwrap();
        assert_eq!(argmax, 93);
    }

    #[test]
    fn frame_count_follows_formula() {
        for n in [4096usize, 5120, 10_000, 44_100] {
            let x = Waveform::silence(n, 44_100);
            let spec = magnitude_spectrogram(&x, 4096, 1024).unwrap();
            assert_eq!(spec.frame_count(), (n - 4096) / 1024 + 1);
            assert_eq!(spec.bins(), 2049);
        }
    }

    #[test]
    fn silence_gives_zero_frames_and_short_input_errors() {
        let x = Waveform::silence(8192, 44_100);
        let spec = magnitude_spectrogram(&x, 4096, 1024).unwrap();
        assert!(spec.frames.iter().flatten().flatten().all(|&m| m == 0.0));

        let short = Waveform::silence(4095, 44_100);
        assert!(matches!(
            magnitude_spectrogram(&short, 4096, 1024),
            Err(SigStatsError::TooShort { .. })
        ));
    }

    #[test]
    fn eq_curve_of_identical_clips_has_zero_std() {
        let clip = mono_sine(1000.0, 0.5, 44_100, 44_100);
        let curve = eq_curve(&[clip.clone(), clip]).unwrap();
        assert!(curve.std_db.iter().all(|&s| s == 0.0));
        let argmax = (0..curve.bins())
            .max_by(|&a, &b| curve.mean_db[a].total_cmp(&curve.mean_db[b]))
            .unwrap();
        assert_eq!(argmax, 93);
    }

    #[test]
    fn eq_curve_ignores_clip_amplitude() {
        let clip = mono_sine(500.0, 0.5, 44_100, 44_100);
        let quiet = eq_curve(&[clip.scaled(0.05)]).unwrap();
        let loud = eq_curve(&[clip]).unwrap();
        for (a, b) in quiet.mean_db.iter().zip(&loud.mean_db) {
            // The loudness meter's gating arithmetic leaves sub-µdB noise.
            assert_abs_diff_eq!(a, b, epsilon = 1e-4);
        }
    }

    #[test]
    fn dual_mono_panning_is_centered() {
        let s = noise(7, 44_100);
        let x = Waveform::new(s.clone(), s, 44_100).unwrap();
        let pan = panning_spectrum(&x).unwrap();
        let mut seen = 0;
        for (_, psi, delta) in pan.reported() {
            assert_abs_diff_eq!(psi, 1.0, epsilon = 1e-9);
            assert_eq!(delta, 0.0);
            seen += 1;
        }
        assert!(seen > 1000, "expected broad support, got {seen} bins");
    }

    #[test]
    fn hard_left_panning() {
        let x = Waveform::new(noise(8, 44_100), vec![0.0; 44_100], 44_100).unwrap();
        let pan = panning_spectrum(&x).unwrap();
        let mut seen = 0;
        for (_, psi, delta) in pan.reported() {
            assert!(psi < 0.01, "psi {psi}");
            assert_eq!(delta, -1.0);
            seen += 1;
        }
        assert!(seen > 1000);
    }

    #[test]
    fn opposite_polarity_still_reads_centered() {
        let s = noise(9, 44_100);
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let x = Waveform::new(s, neg, 44_100).unwrap();
        let pan = panning_spectrum(&x).unwrap();
        for (_, psi, delta) in pan.reported() {
            assert_abs_diff_eq!(psi, 1.0, epsilon = 1e-9);
            assert_eq!(delta, 0.0);
        }
    }

    #[test]
    fn panning_invariances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let l: Vec<f64> = (0..44_100).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let r: Vec<f64> = (0..44_100).map(|_| rng.gen_range(-0.25..0.25)).collect();
        let x = Waveform::new(l.clone(), r.clone(), 44_100).unwrap();
        let swapped = Waveform::new(r, l, 44_100).unwrap();

        let p1 = panning_spectrum(&x).unwrap();
        let p2 = panning_spectrum(&x.scaled(0.125)).unwrap();
        let p3 = panning_spectrum(&swapped).unwrap();
        for k in 0..p1.bins() {
            if p1.support[k] == 0 {
                continue;
            }
            // Global gain: invariant (0.125 is a power of two, so the
            // magnitudes scale exactly and the floor keeps the same cells).
            assert_abs_diff_eq!(p1.psi_mean[k], p2.psi_mean[k], epsilon = 1e-9);
            assert_abs_diff_eq!(p1.delta_mean[k], p2.delta_mean[k], epsilon = 1e-9);
            // L↔R swap: Ψ invariant, Δ negated.
            assert_abs_diff_eq!(p1.psi_mean[k], p3.psi_mean[k], epsilon = 1e-9);
            assert_abs_diff_eq!(p1.delta_mean[k], -p3.delta_mean[k], epsilon = 1e-9);
        }
    }
}
