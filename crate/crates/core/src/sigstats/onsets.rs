//! Onset detection via high-frequency content, and the DRC proxy built on
//! it: the average peak level around onsets of a loudness-normalized clip.

use crate::audio::Waveform;

use super::loudness::normalize_loudness;
use super::spectral::magnitude_spectrogram;
use super::SigStatsError;

pub const HFC_FFT_SIZE: usize = 2048;
pub const HFC_HOP: usize = 512;
/// Adaptive threshold: scale × running median over this many frames, plus
/// an absolute floor on the log-domain rise.
pub const HFC_MEDIAN_FRAMES: usize = 9;
pub const HFC_THRESHOLD_SCALE: f64 = 1.5;
/// Minimum frame-to-frame rise (in nats of HFC energy, ≈ 10%) for a frame
/// to qualify at all; steady tones wiggle far below this.
pub const HFC_MIN_LOG_RISE: f64 = 0.1;
/// Two onsets closer than this are merged into the first.
pub const MIN_ONSET_GAP_S: f64 = 0.05;
/// Half-width of the peak-measurement window around each onset.
pub const PEAK_WINDOW_S: f64 = 0.05;
/// Clips are normalized here before peak measurement.
pub const DRC_NORM_LUFS: f64 = -24.0;

/// Average onset peak level, or the sentinel for clips with no detected
/// transients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DrcValue {
    Db(f64),
    NoTransients,
}

impl DrcValue {
    pub fn db(self) -> Option<f64> {
        match self {
            DrcValue::Db(v) => Some(v),
            DrcValue::NoTransients => None,
        }
    }
}

fn median(window: &mut [f64]) -> f64 {
    window.sort_by(f64::total_cmp);
    window[window.len() / 2]
}

/// Detect onsets from the positive flux of per-frame high-frequency
/// content Σ_k k·|X(k)|² (channels summed). Returns onset times in
/// seconds at frame centers. Too-short input yields no onsets.
pub fn hfc_onsets(x: &Waveform) -> Vec<f64> {
    let spec = match magnitude_spectrogram(x, HFC_FFT_SIZE, HFC_HOP) {
        Ok(s) => s,
        Err(_) => return Vec::new(),
    };
    let frames = spec.frame_count();
    let bins = spec.bins();

    let mut hfc = vec![0.0f64; frames];
    for f in 0..frames {
        let mut acc = 0.0;
        for ch in 0..2 {
            let frame = &spec.frames[ch][f];
            for k in 1..bins {
                acc += k as f64 * frame[k] * frame[k];
            }
        }
        hfc[f] = acc;
    }

    // Positive log-domain flux: the relative rise in HFC energy, which is
    // gain-invariant and ignores the leakage wiggle of steady tones. The
    // first frame has no predecessor and is never an onset.
    let eps = 1e-30;
    let mut flux = vec![0.0f64; frames];
    for f in 1..frames {
        flux[f] = ((hfc[f] + eps) / (hfc[f - 1] + eps)).ln().max(0.0);
    }
    if flux.iter().fold(0.0f64, |m, &v| m.max(v)) == 0.0 {
        return Vec::new();
    }

    let rate = x.sample_rate() as f64;
    let half = HFC_MEDIAN_FRAMES / 2;
    let mut onsets = Vec::new();
    let mut last_onset = f64::NEG_INFINITY;
    for f in 1..frames {
        let lo = f.saturating_sub(half);
        let hi = (f + half + 1).min(frames);
        let mut window: Vec<f64> = flux[lo..hi].to_vec();
        let threshold = HFC_THRESHOLD_SCALE * median(&mut window) + HFC_MIN_LOG_RISE;

        let is_peak = flux[f] > threshold
            && flux[f] >= flux[f - 1]
            && (f + 1 >= frames || flux[f] >= flux[f + 1]);
        if !is_peak {
            continue;
        }
        let time = (f * HFC_HOP + HFC_FFT_SIZE / 2) as f64 / rate;
        if time - last_onset >= MIN_ONSET_GAP_S {
            onsets.push(time);
            last_onset = time;
        }
    }
    onsets
}

/// The DRC proxy 𝒫_μ: normalize to −24 LUFS, detect onsets, take the dB
/// peak (max |sample| over both channels) in ±50 ms around each onset,
/// and average. Larger values mean less compression.
pub fn drc_peak_stat(x: &Waveform) -> Result<DrcValue, SigStatsError> {
    let (normalized, _) = normalize_loudness(x, DRC_NORM_LUFS)?;
    let onsets = hfc_onsets(&normalized);
    if onsets.is_empty() {
        return Ok(DrcValue::NoTransients);
    }
    let rate = normalized.sample_rate() as f64;
    let half = (PEAK_WINDOW_S * rate).round() as usize;
    let len = normalized.len();

    let mut peaks_db = Vec::with_capacity(onsets.len());
    for &t in &onsets {
        let center = (t * rate).round() as usize;
        let lo = center.saturating_sub(half);
        let hi = (center + half + 1).min(len);
        let mut peak = 0.0f64;
        for ch in 0..2 {
            for &v in &normalized.channels()[ch][lo..hi] {
                peak = peak.max(v.abs());
            }
        }
        if peak > 0.0 {
            peaks_db.push(20.0 * peak.log10());
        }
    }
    if peaks_db.is_empty() {
        return Ok(DrcValue::NoTransients);
    }
    Ok(DrcValue::Db(peaks_db.iter().sum::<f64>() / peaks_db.len() as f64))
}
