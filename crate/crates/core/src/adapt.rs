//! Dataset adaptation: per-class loudness offsets and EQ-match FIR
//! filters with zero-phase (forward-backward) application, plus the
//! driver that rewrites a whole manifest of stems.

use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{load_wav, save_wav, AudioError, BitDepth, Waveform};
use crate::harness::{DatasetManifest, HarnessError, ManifestClip};
use crate::metrics::Stem;
use crate::sigstats::EqCurve;

/// Tap count of the EQ-match filter.
pub const DEFAULT_EQ_TAPS: usize = 101;
/// The desired response is held constant outside this band — measured
/// curves are too noisy at the extremes to design against.
pub const EQ_HOLD_LOW_HZ: f64 = 50.0;
pub const EQ_HOLD_HIGH_HZ: f64 = 16_000.0;

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("filter needs an odd tap count of at least 3, got {0}")]
    BadTapCount(usize),
    #[error("filter taps must be finite")]
    NonFiniteTaps,
    #[error("filter taps are not symmetric")]
    AsymmetricTaps,
    #[error("EQ curves are on different frequency grids")]
    GridMismatch,
    #[error("EQ curve contains non-finite values")]
    NonFiniteCurve,
    #[error("loudness means must be finite")]
    NonFiniteLoudness,
    #[error("adaptation plan is empty")]
    EmptyPlan,
    #[error("input too short for zero-phase filtering: {got} samples, need {needed}")]
    InputTooShort { needed: usize, got: usize },
}

/// A linear-phase FIR filter: odd length, exactly symmetric taps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirFilter {
    taps: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_id: Option<String>,
}

impl FirFilter {
    pub fn new(taps: Vec<f64>) -> Result<Self, AdaptError> {
        if taps.len() < 3 || taps.len() % 2 == 0 {
            return Err(AdaptError::BadTapCount(taps.len()));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(AdaptError::NonFiniteTaps);
        }
        for i in 0..taps.len() / 2 {
            if taps[i] != taps[taps.len() - 1 - i] {
                return Err(AdaptError::AsymmetricTaps);
            }
        }
        Ok(Self { taps, source_id: None, target_id: None })
    }

    /// The do-nothing filter: 1 at the center tap.
    pub fn unit_impulse(len: usize) -> Result<Self, AdaptError> {
        let mut taps = vec![0.0; len];
        if len % 2 == 1 && len >= 3 {
            taps[len / 2] = 1.0;
        }
        Self::new(taps)
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Single-pass real amplitude at a frequency (may be negative).
    pub fn amplitude_response(&self, freq_hz: f64, sample_rate: u32) -> f64 {
        let mid = self.taps.len() / 2;
        let w = 2.0 * std::f64::consts::PI * freq_hz / sample_rate as f64;
        let mut a = self.taps[mid];
        for m in 1..=mid {
            a += 2.0 * self.taps[mid + m] * (w * m as f64).cos();
        }
        a
    }

    /// Magnitude of a forward-backward application, in dB: |H(f)|².
    pub fn double_pass_response_db(&self, freq_hz: f64, sample_rate: u32) -> f64 {
        let a = self.amplitude_response(freq_hz, sample_rate).abs().max(1e-300);
        40.0 * a.log10()
    }
}

fn lerp_curve(curve: &EqCurve, freq_hz: f64) -> f64 {
    let freqs = &curve.freqs_hz;
    let lo = freqs[0];
    let hi = *freqs.last().unwrap();
    let f = freq_hz.clamp(lo, hi);
    let step = (hi - lo) / (freqs.len() - 1) as f64;
    let pos = (f - lo) / step;
    let i = (pos.floor() as usize).min(freqs.len() - 2);
    let t = pos - i as f64;
    curve.mean_db[i] * (1.0 - t) + curve.mean_db[i + 1] * t
}

/// Design the EQ-match filter between two averaged curves.
///
/// The desired forward-backward magnitude is the dB difference
/// target − source; each single pass therefore gets the square root of
/// that ratio. Frequency sampling at (taps+1)/2 uniform points, Hann
/// window, with the halves mirrored so symmetry holds exactly.
pub fn design_eq_match_filter(source: &EqCurve, target: &EqCurve) -> Result<FirFilter, AdaptError> {
    design_eq_match_filter_with_taps(source, target, DEFAULT_EQ_TAPS)
}

pub fn design_eq_match_filter_with_taps(
    source: &EqCurve,
    target: &EqCurve,
    taps: usize,
) -> Result<FirFilter, AdaptError> {
    if taps < 3 || taps % 2 == 0 {
        return Err(AdaptError::BadTapCount(taps));
    }
    if !source.same_grid(target) {
        return Err(AdaptError::GridMismatch);
    }
    if source.mean_db.iter().chain(&target.mean_db).any(|v| !v.is_finite()) {
        return Err(AdaptError::NonFiniteCurve);
    }

    // The curve grid spans 0..=Nyquist.
    let sample_rate = 2.0 * source.freqs_hz.last().unwrap();
    let mid = (taps - 1) / 2;

    // Single-pass amplitude √D at the design frequencies k·fs/taps.
    let amplitudes: Vec<f64> = (0..=mid)
        .map(|k| {
            let f = (k as f64 * sample_rate / taps as f64)
                .clamp(EQ_HOLD_LOW_HZ, EQ_HOLD_HIGH_HZ.min(sample_rate / 2.0));
            let diff_db = lerp_curve(target, f) - lerp_curve(source, f);
            10f64.powf(diff_db / 40.0)
        })
        .collect();

    let mut h = vec![0.0; taps];
    for (n, tap) in h.iter_mut().enumerate() {
        let mut acc = amplitudes[0];
        for (k, a) in amplitudes.iter().enumerate().skip(1) {
            let phase =
                2.0 * std::f64::consts::PI * k as f64 * (n as f64 - mid as f64) / taps as f64;
            acc += 2.0 * a * phase.cos();
        }
        let window =
            0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (taps - 1) as f64).cos();
        *tap = acc / taps as f64 * window;
    }
    // Mirror the lower half onto the upper so symmetry is exact, not
    // merely up to rounding.
    for n in 0..mid {
        h[taps - 1 - n] = h[n];
    }
    FirFilter::new(h)
}

fn fft_convolve(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let out_len = x.len() + kernel.len() - 1;
    let size = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);

    let mut a: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    a.resize(size, Complex::new(0.0, 0.0));
    let mut b: Vec<Complex<f64>> = kernel.iter().map(|&v| Complex::new(v, 0.0)).collect();
    b.resize(size, Complex::new(0.0, 0.0));
    forward.process(&mut a);
    forward.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    inverse.process(&mut a);
    let scale = 1.0 / size as f64;
    a[..out_len].iter().map(|c| c.re * scale).collect()
}

/// Apply the filter forward then backward per channel: magnitude |H(f)|²,
/// phase untouched, output length unchanged. Edges are handled by
/// reflecting taps−1 samples; inputs shorter than 3·taps are rejected.
pub fn zero_phase_apply(x: &Waveform, fir: &FirFilter) -> Result<Waveform, AdaptError> {
    let taps = fir.len();
    let needed = 3 * taps;
    if x.len() < needed {
        return Err(AdaptError::InputTooShort { needed, got: x.len() });
    }
    let pad = taps - 1;
    // A symmetric filter applied forward then backward equals one pass of
    // its self-convolution with the group delay doubled.
    let mut kernel = vec![0.0; 2 * taps - 1];
    for (i, &a) in fir.taps().iter().enumerate() {
        for (j, &b) in fir.taps().iter().enumerate() {
            kernel[i + j] += a * b;
        }
    }

    let filter_channel = |s: &[f64]| -> Vec<f64> {
        let n = s.len();
        let mut padded = Vec::with_capacity(n + 2 * pad);
        padded.extend((1..=pad).rev().map(|i| s[i]));
        padded.extend_from_slice(s);
        padded.extend((2..=pad + 1).map(|i| s[n - i]));
        let full = fft_convolve(&padded, &kernel);
        full[2 * pad..2 * pad + n].to_vec()
    };

    let left = filter_channel(x.left());
    let right = filter_channel(x.right());
    Ok(Waveform::new(left, right, x.sample_rate())?)
}

/// Offset that moves a class's mean loudness onto a target's.
pub fn loudness_match_offset(source_mean: f64, target_mean: f64) -> Result<f64, AdaptError> {
    if !source_mean.is_finite() || !target_mean.is_finite() {
        return Err(AdaptError::NonFiniteLoudness);
    }
    Ok(target_mean - source_mean)
}

/// Adaptation of one stem class: a broadband loudness offset and/or an
/// EQ-match filter (stored as its taps).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassAdaptation {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loudness_offset_lu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eq_filter_taps: Option<Vec<f64>>,
}

impl ClassAdaptation {
    fn is_empty(&self) -> bool {
        self.loudness_offset_lu.is_none() && self.eq_filter_taps.is_none()
    }

    fn validate(&self) -> Result<(), AdaptError> {
        if let Some(offset) = self.loudness_offset_lu {
            if !offset.is_finite() {
                return Err(AdaptError::NonFiniteLoudness);
            }
        }
        if let Some(taps) = &self.eq_filter_taps {
            FirFilter::new(taps.clone())?;
        }
        Ok(())
    }
}

/// Per-class adaptations; at least one class must carry one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationPlan {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dx: Option<ClassAdaptation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fx: Option<ClassAdaptation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mx: Option<ClassAdaptation>,
}

impl AdaptationPlan {
    pub fn new(
        dx: Option<ClassAdaptation>,
        fx: Option<ClassAdaptation>,
        mx: Option<ClassAdaptation>,
    ) -> Result<Self, AdaptError> {
        let plan = Self { dx, fx, mx };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), AdaptError> {
        let classes = [&self.dx, &self.fx, &self.mx];
        if classes.iter().all(|c| c.as_ref().map_or(true, |a| a.is_empty())) {
            return Err(AdaptError::EmptyPlan);
        }
        for class in classes.into_iter().flatten() {
            class.validate()?;
        }
        Ok(())
    }

    pub fn loudness_only(stem: Stem, offset_lu: f64) -> Result<Self, AdaptError> {
        let adaptation =
            ClassAdaptation { loudness_offset_lu: Some(offset_lu), eq_filter_taps: None };
        Self::single(stem, adaptation)
    }

    pub fn eq_only(stem: Stem, filter: &FirFilter) -> Result<Self, AdaptError> {
        let adaptation = ClassAdaptation {
            loudness_offset_lu: None,
            eq_filter_taps: Some(filter.taps().to_vec()),
        };
        Self::single(stem, adaptation)
    }

    fn single(stem: Stem, adaptation: ClassAdaptation) -> Result<Self, AdaptError> {
        let mut plan = Self::default();
        *plan.class_mut(stem) = Some(adaptation);
        plan.validate()?;
        Ok(plan)
    }

    pub fn class(&self, stem: Stem) -> Option<&ClassAdaptation> {
        match stem {
            Stem::Dx => self.dx.as_ref(),
            Stem::Fx => self.fx.as_ref(),
            Stem::Mx => self.mx.as_ref(),
        }
    }

    fn class_mut(&mut self, stem: Stem) -> &mut Option<ClassAdaptation> {
        match stem {
            Stem::Dx => &mut self.dx,
            Stem::Fx => &mut self.fx,
            Stem::Mx => &mut self.mx,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AdaptError> {
        let plan: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AdaptError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AdaptFailure {
    pub clip_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdaptOutcome {
    pub manifest: DatasetManifest,
    pub failures: Vec<AdaptFailure>,
}

const PCM24_FULL_SCALE: f64 = 8_388_608.0;

/// Snap to the 24-bit grid exactly as the writer will, so the samples on
/// disk equal the samples summed here.
fn quantize_pcm24(w: &Waveform) -> Waveform {
    let q = |v: f64| {
        (v * PCM24_FULL_SCALE).round().clamp(-PCM24_FULL_SCALE, PCM24_FULL_SCALE - 1.0)
            / PCM24_FULL_SCALE
    };
    let left = w.left().iter().map(|&v| q(v)).collect();
    let right = w.right().iter().map(|&v| q(v)).collect();
    Waveform::new(left, right, w.sample_rate()).expect("quantization preserves validity")
}

/// Rewrite every clip of a manifest under the plan and re-sum mixtures
/// from the adapted stems, so the stems-sum-to-mixture identity holds in
/// the output dataset bit-for-bit (stems are snapped to the 24-bit grid
/// before summation, and all four files are written as 24-bit PCM).
///
/// Per-clip failures are recorded and the run continues; the returned
/// manifest covers only the clips that were written.
pub fn adapt_dataset(
    manifest: &DatasetManifest,
    plan: &AdaptationPlan,
    out_dir: impl AsRef<Path>,
) -> Result<AdaptOutcome, AdaptError> {
    plan.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;

    let mut filters: [Option<FirFilter>; 3] = [None, None, None];
    let mut gains = [1.0f64; 3];
    for (i, stem) in Stem::ALL.iter().enumerate() {
        if let Some(adaptation) = plan.class(*stem) {
            if let Some(offset) = adaptation.loudness_offset_lu {
                gains[i] = 10f64.powf(offset / 20.0);
            }
            if let Some(taps) = &adaptation.eq_filter_taps {
                filters[i] = Some(FirFilter::new(taps.clone())?);
            }
        }
    }

    let adapt_clip = |clip: &ManifestClip| -> Result<ManifestClip, AdaptFailure> {
        let fail = |reason: String| AdaptFailure { clip_id: clip.clip_id.clone(), reason };
        let sources = [&clip.dx, &clip.fx, &clip.mx];
        let mut adapted: Vec<Waveform> = Vec::with_capacity(3);
        for (i, path) in sources.iter().enumerate() {
            let mut stem = load_wav(path).map_err(|e| fail(format!("loading {path:?}: {e}")))?;
            if gains[i] != 1.0 {
                stem = stem.scaled(gains[i]);
            }
            if let Some(fir) = &filters[i] {
                stem = zero_phase_apply(&stem, fir)
                    .map_err(|e| fail(format!("filtering {path:?}: {e}")))?;
            }
            adapted.push(quantize_pcm24(&stem));
        }
        let mixture = adapted[0]
            .add(&adapted[1])
            .and_then(|s| s.add(&adapted[2]))
            .map_err(|e| fail(format!("re-summing mixture: {e}")))?;

        let clip_dir = out_dir.join(&clip.clip_id);
        std::fs::create_dir_all(&clip_dir)
            .map_err(|e| fail(format!("creating {clip_dir:?}: {e}")))?;
        let names = ["dx.wav", "fx.wav", "mx.wav"];
        let mut paths = Vec::with_capacity(3);
        for (name, stem) in names.iter().zip(&adapted) {
            let path = clip_dir.join(name);
            save_wav(stem, &path, BitDepth::Pcm24)
                .map_err(|e| fail(format!("writing {path:?}: {e}")))?;
            paths.push(path);
        }
        let mixture_path = clip_dir.join("mixture.wav");
        let stats = save_wav(&mixture, &mixture_path, BitDepth::Pcm24)
            .map_err(|e| fail(format!("writing {mixture_path:?}: {e}")))?;
        if stats.clipped_samples > 0 {
            return Err(fail(format!(
                "adapted mixture clipped at {} samples; stems no longer sum to it on disk",
                stats.clipped_samples
            )));
        }

        Ok(ManifestClip {
            clip_id: clip.clip_id.clone(),
            movie_id: clip.movie_id.clone(),
            mixture: mixture_path,
            dx: paths[0].clone(),
            fx: paths[1].clone(),
            mx: paths[2].clone(),
        })
    };

    let results: Vec<Result<ManifestClip, AdaptFailure>> =
        manifest.clips.par_iter().map(adapt_clip).collect();
    let mut clips = Vec::new();
    let mut failures = Vec::new();
    for result in results {
        match result {
            Ok(clip) => clips.push(clip),
            Err(failure) => failures.push(failure),
        }
    }
    let adapted = DatasetManifest::new(clips, manifest.movies.clone())?;
    Ok(AdaptOutcome { manifest: adapted, failures })
}
