//! Dataset signal statistics: integrated loudness, average EQ curves,
//! stereo panning spectra, and a dynamic-range-compression proxy from
//! onset peak levels.

mod loudness;
mod onsets;
mod spectral;

pub use loudness::{
    integrated_loudness, normalize_loudness, Loudness, GATING_BLOCK_S, GATING_HOP_S,
};
pub use onsets::{
    drc_peak_stat, hfc_onsets, DrcValue, DRC_NORM_LUFS, HFC_FFT_SIZE, HFC_HOP,
    HFC_MEDIAN_FRAMES, HFC_MIN_LOG_RISE, HFC_THRESHOLD_SCALE, MIN_ONSET_GAP_S, PEAK_WINDOW_S,
};
pub use spectral::{
    eq_curve, magnitude_spectrogram, panning_spectrum, EqCurve, MagnitudeSpectrogram,
    PanningSpectrum, EQ_FFT_SIZE, EQ_HOP, EQ_NORM_LUFS, PANNING_ENERGY_FLOOR,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioError, Waveform};

#[derive(Debug, Error)]
pub enum SigStatsError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("waveform too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("loudness is unmeasurable (all blocks gated away)")]
    Unmeasurable,
    #[error("no clips given")]
    EmptyInput,
    #[error("sample-rate mismatch across clips: {a} Hz vs {b} Hz")]
    RateMismatch { a: u32, b: u32 },
}

/// A mean ± standard deviation pair (population std).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some(MeanStd { mean, std: var.sqrt() })
}

/// The full measurement suite for one class of stems.
///
/// `loudness`/`drc` are `None` when no clip in the class was measurable;
/// `psi`/`delta` entries are `None` at bins with no retained cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassStatsReport {
    pub clips: usize,
    pub loudness: Option<MeanStd>,
    pub drc: Option<MeanStd>,
    pub eq: EqCurve,
    pub psi: Vec<Option<f64>>,
    pub delta: Vec<Option<f64>>,
}

/// Run every measurement over a class of clips and aggregate.
pub fn analyze_class(clips: &[Waveform]) -> Result<ClassStatsReport, SigStatsError> {
    use rayon::prelude::*;

    if clips.is_empty() {
        return Err(SigStatsError::EmptyInput);
    }
    let per_clip: Vec<(Option<f64>, Option<f64>, Option<PanningSpectrum>)> = clips
        .par_iter()
        .map(|clip| {
            let lufs = integrated_loudness(clip).ok().and_then(Loudness::lufs);
            let drc = drc_peak_stat(clip).ok().and_then(DrcValue::db);
            let pan = panning_spectrum(clip).ok();
            (lufs, drc, pan)
        })
        .collect();

    let loudness_values: Vec<f64> = per_clip.iter().filter_map(|p| p.0).collect();
    let drc_values: Vec<f64> = per_clip.iter().filter_map(|p| p.1).collect();
    let eq = eq_curve(clips)?;

    // Per-bin panning, averaged uniformly over the clips that had support
    // at that bin.
    let bins = eq.bins();
    let mut psi = vec![None; bins];
    let mut delta = vec![None; bins];
    for k in 0..bins {
        let mut psis = Vec::new();
        let mut deltas = Vec::new();
        for (_, _, pan) in &per_clip {
            if let Some(p) = pan {
                if p.support[k] > 0 {
                    psis.push(p.psi_mean[k]);
                    deltas.push(p.delta_mean[k]);
                }
            }
        }
        if !psis.is_empty() {
            psi[k] = Some(psis.iter().sum::<f64>() / psis.len() as f64);
            delta[k] = Some(deltas.iter().sum::<f64>() / deltas.len() as f64);
        }
    }

    Ok(ClassStatsReport {
        clips: clips.len(),
        loudness: mean_std(&loudness_values),
        drc: mean_std(&drc_values),
        eq,
        psi,
        delta,
    })
}
