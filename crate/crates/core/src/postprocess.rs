//! Model-agnostic post-processing of separator estimates: peak
//! normalization, least-squares scale recovery, mixture-consistency
//! projection, ensemble blending, cascade residuals, and the
//! input-loudness sweep around a black-box separator.

use std::path::PathBuf;
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{load_wav, save_wav, AudioError, BitDepth, Waveform};
use crate::metrics::{global_sdr_clip, ClipOutcome, ClipScore, EstimateSet, MetricsError, StemSet};
use crate::sigstats::{normalize_loudness, SigStatsError};

/// Denominator regularizer of the least-squares scale estimate.
pub const LS_EPSILON: f64 = 1e-7;
/// The baseline splits the consistency residual evenly between FX and MX.
pub const DEFAULT_FX_SHARE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PostprocessError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    SigStats(#[from] SigStatsError),
    #[error("cannot peak-normalize a silent waveform")]
    SilentInput,
    #[error("FX share of the residual must be in [0, 1], got {0}")]
    BadSplit(f64),
    #[error("blend weights must be finite and non-negative")]
    BadWeight,
    #[error("blend needs at least one positive weight")]
    NoPositiveWeight,
    #[error("blend got {estimates} estimates but {weights} weights")]
    WeightCountMismatch { weights: usize, estimates: usize },
    #[error("ls_scale and inverse_ls_scale are mutually exclusive")]
    ConflictingScaleConfig,
    #[error("cannot invert a near-zero scale coefficient ({0:.3e})")]
    DegenerateScale(f64),
    #[error("separator failed: {0}")]
    Separator(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scale the waveform so its largest absolute sample is 1. Returns the
/// applied gain so callers can undo it.
pub fn peak_normalize(x: &Waveform) -> Result<(Waveform, f64), PostprocessError> {
    let peak = x.peak();
    if peak == 0.0 {
        return Err(PostprocessError::SilentInput);
    }
    let gain = 1.0 / peak;
    Ok((x.scaled(gain), gain))
}

/// Least-squares scale of an estimate against the mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleCoefficient {
    pub alpha: f64,
}

/// α = Σ x·ŝ / (ε + Σ ŝ²), both channels pooled.
pub fn ls_scale_coeff(x: &Waveform, est: &Waveform) -> Result<ScaleCoefficient, PostprocessError> {
    x.check_aligned(est)?;
    let mut num = 0.0f64;
    let mut den = LS_EPSILON;
    for ch in 0..2 {
        let a = x.channels()[ch];
        let b = est.channels()[ch];
        for i in 0..a.len() {
            num += a[i] * b[i];
            den += b[i] * b[i];
        }
    }
    Ok(ScaleCoefficient { alpha: num / den })
}

pub fn apply_scale(est: &Waveform, alpha: f64) -> Waveform {
    est.scaled(alpha)
}

/// Distribute the mixture residual r = x − ŝ_DX − ŝ_FX − ŝ_MX into the
/// effects and music stems (even split); dialogue is left alone. The
/// output stems sum to x to double-precision rounding, and reapplying the
/// projection changes nothing.
pub fn mixture_consistency(
    x: &Waveform,
    est: &EstimateSet,
) -> Result<EstimateSet, PostprocessError> {
    mixture_consistency_split(x, est, DEFAULT_FX_SHARE)
}

/// As [`mixture_consistency`], with `fx_share` of the residual going to FX
/// and the exact complement to MX.
pub fn mixture_consistency_split(
    x: &Waveform,
    est: &EstimateSet,
    fx_share: f64,
) -> Result<EstimateSet, PostprocessError> {
    if !(0.0..=1.0).contains(&fx_share) {
        return Err(PostprocessError::BadSplit(fx_share));
    }
    x.check_aligned(&est.dx)?;
    x.check_aligned(&est.fx)?;
    x.check_aligned(&est.mx)?;

    let n = x.len();
    let mut fx = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut mx = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for ch in 0..2 {
        let (xs, ds, fs, ms) = (
            x.channels()[ch],
            est.dx.channels()[ch],
            est.fx.channels()[ch],
            est.mx.channels()[ch],
        );
        for i in 0..n {
            // MX is written as the exact complement of DX + FX', so a
            // second application sees a bitwise-zero residual.
            let non_dx = xs[i] - ds[i];
            let r = (non_dx - fs[i]) - ms[i];
            let fx_new = fs[i] + fx_share * r;
            fx[ch].push(fx_new);
            mx[ch].push(non_dx - fx_new);
        }
    }
    let [fxl, fxr] = fx;
    let [mxl, mxr] = mx;
    Ok(EstimateSet::new(
        est.dx.clone(),
        Waveform::new(fxl, fxr, x.sample_rate())?,
        Waveform::new(mxl, mxr, x.sample_rate())?,
    )?)
}

/// One ensemble member's weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendEntry {
    pub estimate_id: String,
    pub weight: f64,
}

/// Non-negative ensemble weights; effective coefficients are the weights
/// normalized to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendSpec {
    pub entries: Vec<BlendEntry>,
}

impl BlendSpec {
    pub fn new(entries: Vec<BlendEntry>) -> Result<Self, PostprocessError> {
        if entries.iter().any(|e| !e.weight.is_finite() || e.weight < 0.0) {
            return Err(PostprocessError::BadWeight);
        }
        if !entries.iter().any(|e| e.weight > 0.0) {
            return Err(PostprocessError::NoPositiveWeight);
        }
        Ok(Self { entries })
    }

    pub fn from_weights(weights: impl IntoIterator<Item = f64>) -> Result<Self, PostprocessError> {
        Self::new(
            weights
                .into_iter()
                .enumerate()
                .map(|(i, weight)| BlendEntry { estimate_id: format!("est{i}"), weight })
                .collect(),
        )
    }

    /// Weights normalized to sum to one.
    pub fn coefficients(&self) -> Vec<f64> {
        let total: f64 = self.entries.iter().map(|e| e.weight).sum();
        self.entries.iter().map(|e| e.weight / total).collect()
    }
}

/// Weighted average of aligned estimates: Σ wᵢ·estᵢ / Σ wᵢ.
pub fn blend(estimates: &[Waveform], spec: &BlendSpec) -> Result<Waveform, PostprocessError> {
    if estimates.len() != spec.entries.len() {
        return Err(PostprocessError::WeightCountMismatch {
            weights: spec.entries.len(),
            estimates: estimates.len(),
        });
    }
    for e in &estimates[1..] {
        estimates[0].check_aligned(e)?;
    }
    let coeffs = spec.coefficients();
    let mut out = estimates[0].scaled(coeffs[0]);
    for (est, &c) in estimates.iter().zip(&coeffs).skip(1) {
        out = out.add(&est.scaled(c))?;
    }
    Ok(out)
}

/// The pseudo music+effects mixture: x − ŝ_DX, fed to a second-stage
/// two-stem separation.
pub fn cascade_residual(x: &Waveform, est_dx: &Waveform) -> Result<Waveform, PostprocessError> {
    Ok(x.sub(est_dx)?)
}

/// Scorer-side post-chain, applied to already-rendered estimates before
/// scoring. Default is no processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessConfig {
    /// Rescale each estimate by its least-squares coefficient against the
    /// mixture.
    pub ls_scale: bool,
    /// Rescale by the reciprocal coefficient instead — the variant used to
    /// undo a gain the separator saw on its input.
    pub inverse_ls_scale: bool,
    /// Distribute the mixture residual into FX/MX after any scaling.
    pub mixture_consistency: bool,
}

impl PostprocessConfig {
    pub fn none() -> Self {
        Self::default()
    }

    /// The baseline chain: least-squares scaling, then consistency.
    pub fn baseline() -> Self {
        Self { ls_scale: true, inverse_ls_scale: false, mixture_consistency: true }
    }

    pub fn is_none(&self) -> bool {
        *self == Self::default()
    }

    pub fn apply(
        &self,
        mixture: &Waveform,
        mut est: EstimateSet,
    ) -> Result<EstimateSet, PostprocessError> {
        if self.ls_scale && self.inverse_ls_scale {
            return Err(PostprocessError::ConflictingScaleConfig);
        }
        if self.ls_scale || self.inverse_ls_scale {
            let mut scaled = Vec::with_capacity(3);
            for stem in [&est.dx, &est.fx, &est.mx] {
                let alpha = ls_scale_coeff(mixture, stem)?.alpha;
                let gain = if self.inverse_ls_scale {
                    if alpha.abs() < 1e-12 {
                        return Err(PostprocessError::DegenerateScale(alpha));
                    }
                    1.0 / alpha
                } else {
                    alpha
                };
                scaled.push(apply_scale(stem, gain));
            }
            let mut it = scaled.into_iter();
            est = EstimateSet::new(
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
            )?;
        }
        if self.mixture_consistency {
            est = mixture_consistency(mixture, &est)?;
        }
        Ok(est)
    }
}

/// A black-box three-stem separator.
pub trait Separator: Sync {
    fn separate(&self, input: &Waveform) -> Result<EstimateSet, PostprocessError>;
}

/// Returns a third of the input as every stem — the no-information
/// baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentitySeparator;

impl Separator for IdentitySeparator {
    fn separate(&self, input: &Waveform) -> Result<EstimateSet, PostprocessError> {
        let third = input.scaled(1.0 / 3.0);
        Ok(EstimateSet::new(third.clone(), third.clone(), third)?)
    }
}

/// Returns the true stems, scaled to match however the input was gained
/// relative to the reference mixture. Perfect by construction; used to
/// sanity-check harnesses and sweeps.
#[derive(Debug, Clone)]
pub struct OracleSeparator {
    truth: StemSet,
}

impl OracleSeparator {
    pub fn new(truth: StemSet) -> Self {
        Self { truth }
    }
}

impl Separator for OracleSeparator {
    fn separate(&self, input: &Waveform) -> Result<EstimateSet, PostprocessError> {
        let gain = ls_scale_coeff(input, &self.truth.mixture)?.alpha;
        Ok(EstimateSet::new(
            self.truth.dx.scaled(gain),
            self.truth.fx.scaled(gain),
            self.truth.mx.scaled(gain),
        )?)
    }
}

/// An external separator process.
///
/// Contract: `program [args…] <input.wav> <output_dir>` must write
/// `dx.wav`, `fx.wav`, `mx.wav` into the output directory, at the input's
/// length and sample rate. A nonzero exit is a failure. Each call gets an
/// isolated temporary workspace.
#[derive(Debug, Clone)]
pub struct SubprocessSeparator {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl SubprocessSeparator {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self { program: program.into(), args: Vec::new() }
    }
}

impl Separator for SubprocessSeparator {
    fn separate(&self, input: &Waveform) -> Result<EstimateSet, PostprocessError> {
        let workspace = tempfile::tempdir()?;
        let input_path = workspace.path().join("input.wav");
        let out_dir = workspace.path().join("out");
        std::fs::create_dir(&out_dir)?;
        save_wav(input, &input_path, BitDepth::Float32)?;

        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(&input_path)
            .arg(&out_dir)
            .output()?;
        if !output.status.success() {
            return Err(PostprocessError::Separator(format!(
                "{} exited with {}: {}",
                self.program.display(),
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }

        let mut stems = Vec::with_capacity(3);
        for name in ["dx.wav", "fx.wav", "mx.wav"] {
            let wave = load_wav(out_dir.join(name))
                .map_err(|e| PostprocessError::Separator(format!("reading {name}: {e}")))?;
            if wave.len() != input.len() || wave.sample_rate() != input.sample_rate() {
                return Err(PostprocessError::Separator(format!(
                    "{name}: got {} samples at {} Hz, expected {} at {} Hz",
                    wave.len(),
                    wave.sample_rate(),
                    input.len(),
                    input.sample_rate()
                )));
            }
            stems.push(wave);
        }
        let mut it = stems.into_iter();
        Ok(EstimateSet::new(
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
        )?)
    }
}

/// One grid point of a loudness sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub input_lufs: f64,
    pub score: Option<ClipScore>,
    pub error: Option<String>,
}

/// Gain the mixture to each grid loudness, separate, undo the gain on the
/// outputs, and score against the references. Separator failures are
/// recorded per point and the sweep continues.
pub fn loudness_sweep(
    separator: &dyn Separator,
    targets: &StemSet,
    lufs_grid: &[f64],
) -> Result<Vec<SweepPoint>, PostprocessError> {
    use rayon::prelude::*;

    let run_point = |&target_lufs: &f64| -> SweepPoint {
        let point = |score, error| SweepPoint { input_lufs: target_lufs, score, error };
        let (gained, gain_db) = match normalize_loudness(&targets.mixture, target_lufs) {
            Ok(v) => v,
            Err(e) => return point(None, Some(e.to_string())),
        };
        let est = match separator.separate(&gained) {
            Ok(v) => v,
            Err(e) => return point(None, Some(e.to_string())),
        };
        let undo = 10f64.powf(-gain_db / 20.0);
        let restored = match EstimateSet::new(
            est.dx.scaled(undo),
            est.fx.scaled(undo),
            est.mx.scaled(undo),
        ) {
            Ok(v) => v,
            Err(e) => return point(None, Some(e.to_string())),
        };
        match global_sdr_clip(targets, &restored) {
            Ok(ClipOutcome::Scored(score)) => point(Some(score), None),
            Ok(ClipOutcome::UndefinedTarget(stems)) => point(
                None,
                Some(format!("undefined target stems: {stems:?}")),
            ),
            Err(e) => point(None, Some(e.to_string())),
        }
    };

    Ok(lufs_grid.par_iter().map(run_point).collect())
}
