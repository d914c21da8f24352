//! The challenge metric — per-source stereo SDR, per-clip global SDR,
//! dataset aggregation — plus the RMS rule used to curate evaluation
//! segments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioError, Waveform};

/// SDR values are clamped to ±this, keeping degenerate clips (zero error,
/// zero estimate) finite and aggregable.
pub const SDR_CLAMP_DB: f64 = 100.0;

/// Default segment-curation window and hop. Evaluation clips average
/// eleven seconds, cut on a one-second grid.
pub const DEFAULT_CURATION_WINDOW_S: f64 = 11.0;
pub const DEFAULT_CURATION_HOP_S: f64 = 1.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("empty waveform has no RMS")]
    EmptyWaveform,
    #[error("no scored clips to aggregate")]
    EmptyAggregate,
    #[error("curation window and hop must be positive, got window {window}s hop {hop}s")]
    BadWindow { window: f64, hop: f64 },
    #[error("RMS thresholds must all be positive")]
    BadThreshold,
}

/// The three scored sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stem {
    Dx,
    Fx,
    Mx,
}

impl Stem {
    pub const ALL: [Stem; 3] = [Stem::Dx, Stem::Fx, Stem::Mx];
}

impl std::fmt::Display for Stem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stem::Dx => "dx",
            Stem::Fx => "fx",
            Stem::Mx => "mx",
        })
    }
}

/// A mixture with its three reference stems, all aligned.
#[derive(Debug, Clone)]
pub struct StemSet {
    pub mixture: Waveform,
    pub dx: Waveform,
    pub fx: Waveform,
    pub mx: Waveform,
}

impl StemSet {
    pub fn new(
        mixture: Waveform,
        dx: Waveform,
        fx: Waveform,
        mx: Waveform,
    ) -> Result<Self, MetricsError> {
        mixture.check_aligned(&dx)?;
        mixture.check_aligned(&fx)?;
        mixture.check_aligned(&mx)?;
        Ok(Self { mixture, dx, fx, mx })
    }

    pub fn stem(&self, stem: Stem) -> &Waveform {
        match stem {
            Stem::Dx => &self.dx,
            Stem::Fx => &self.fx,
            Stem::Mx => &self.mx,
        }
    }

    /// Largest absolute deviation between the mixture and the stem sum —
    /// zero (to rounding) when the set is mixture-consistent.
    pub fn consistency_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (ch, mix_ch) in [
            (0usize, self.mixture.left()),
            (1, self.mixture.right()),
        ] {
            let (d, f, m) = (
                self.dx.channels()[ch],
                self.fx.channels()[ch],
                self.mx.channels()[ch],
            );
            for i in 0..mix_ch.len() {
                worst = worst.max((mix_ch[i] - (d[i] + f[i] + m[i])).abs());
            }
        }
        worst
    }
}

/// Three estimated stems (no mixture).
#[derive(Debug, Clone)]
pub struct EstimateSet {
    pub dx: Waveform,
    pub fx: Waveform,
    pub mx: Waveform,
}

impl EstimateSet {
    pub fn new(dx: Waveform, fx: Waveform, mx: Waveform) -> Result<Self, MetricsError> {
        dx.check_aligned(&fx)?;
        dx.check_aligned(&mx)?;
        Ok(Self { dx, fx, mx })
    }

    pub fn stem(&self, stem: Stem) -> &Waveform {
        match stem {
            Stem::Dx => &self.dx,
            Stem::Fx => &self.fx,
            Stem::Mx => &self.mx,
        }
    }
}

/// Per-source SDR, or the sentinel for a target with no energy (such a
/// clip is excluded from aggregation rather than scored).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceSdr {
    Db(f64),
    UndefinedTarget,
}

impl SourceSdr {
    pub fn db(self) -> Option<f64> {
        match self {
            SourceSdr::Db(v) => Some(v),
            SourceSdr::UndefinedTarget => None,
        }
    }
}

/// Stereo global SDR for one source:
/// 10·log10( Σ_n‖s(n)‖² / Σ_n‖s(n)−ŝ(n)‖² ), both channels pooled into a
/// single pair of energy sums, clamped to ±[`SDR_CLAMP_DB`].
pub fn sdr_source(target: &Waveform, estimate: &Waveform) -> Result<SourceSdr, MetricsError> {
    target.check_aligned(estimate)?;
    let mut target_energy = 0.0f64;
    let mut error_energy = 0.0f64;
    for ch in 0..2 {
        let s = target.channels()[ch];
        let e = estimate.channels()[ch];
        for i in 0..s.len() {
            target_energy += s[i] * s[i];
            let d = s[i] - e[i];
            error_energy += d * d;
        }
    }
    if target_energy == 0.0 {
        return Ok(SourceSdr::UndefinedTarget);
    }
    let db = if error_energy == 0.0 {
        SDR_CLAMP_DB
    } else {
        (10.0 * (target_energy / error_energy).log10()).clamp(-SDR_CLAMP_DB, SDR_CLAMP_DB)
    };
    Ok(SourceSdr::Db(db))
}

/// Per-clip score: three per-source SDRs and their arithmetic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub sdr_dx: f64,
    pub sdr_fx: f64,
    pub sdr_mx: f64,
    pub mean: f64,
}

impl ClipScore {
    pub fn new(sdr_dx: f64, sdr_fx: f64, sdr_mx: f64) -> Self {
        Self {
            sdr_dx,
            sdr_fx,
            sdr_mx,
            mean: (sdr_dx + sdr_fx + sdr_mx) / 3.0,
        }
    }

    /// The clamp floor on every source — how missing or unreadable
    /// submissions are scored.
    pub fn floor() -> Self {
        Self::new(-SDR_CLAMP_DB, -SDR_CLAMP_DB, -SDR_CLAMP_DB)
    }

    pub fn sdr(&self, stem: Stem) -> f64 {
        match stem {
            Stem::Dx => self.sdr_dx,
            Stem::Fx => self.sdr_fx,
            Stem::Mx => self.sdr_mx,
        }
    }
}

/// Outcome of scoring one clip.
#[derive(Debug, Clone, PartialEq)]
pub enum ClipOutcome {
    Scored(ClipScore),
    /// One or more reference stems carried no energy; the clip cannot be
    /// scored and is skipped in aggregation.
    UndefinedTarget(Vec<Stem>),
}

impl ClipOutcome {
    pub fn score(&self) -> Option<&ClipScore> {
        match self {
            ClipOutcome::Scored(s) => Some(s),
            ClipOutcome::UndefinedTarget(_) => None,
        }
    }
}

/// Score one clip: per-source SDR on each stem plus the mean.
pub fn global_sdr_clip(
    targets: &StemSet,
    estimates: &EstimateSet,
) -> Result<ClipOutcome, MetricsError> {
    let mut undefined = Vec::new();
    let mut values = [0.0f64; 3];
    for (i, stem) in Stem::ALL.into_iter().enumerate() {
        match sdr_source(targets.stem(stem), estimates.stem(stem))? {
            SourceSdr::Db(v) => values[i] = v,
            SourceSdr::UndefinedTarget => undefined.push(stem),
        }
    }
    if !undefined.is_empty() {
        return Ok(ClipOutcome::UndefinedTarget(undefined));
    }
    Ok(ClipOutcome::Scored(ClipScore::new(
        values[0], values[1], values[2],
    )))
}

/// Arithmetic mean of per-clip scores, field by field.
pub fn aggregate<'a>(
    scores: impl IntoIterator<Item = &'a ClipScore>,
) -> Result<ClipScore, MetricsError> {
    let mut n = 0usize;
    let (mut dx, mut fx, mut mx) = (0.0f64, 0.0f64, 0.0f64);
    for s in scores {
        dx += s.sdr_dx;
        fx += s.sdr_fx;
        mx += s.sdr_mx;
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::EmptyAggregate);
    }
    let n = n as f64;
    Ok(ClipScore::new(dx / n, fx / n, mx / n))
}

/// Channel-pooled RMS amplitude: (1/N · Σ_n‖s(n)‖²)^½.
pub fn rms(waveform: &Waveform) -> Result<f64, MetricsError> {
    if waveform.is_empty() {
        return Err(MetricsError::EmptyWaveform);
    }
    Ok((waveform.energy() / waveform.len() as f64).sqrt())
}

/// Per-source RMS floors a segment must clear to be kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsThresholds {
    pub tau_dx: f64,
    pub tau_fx: f64,
    pub tau_mx: f64,
}

impl RmsThresholds {
    pub fn new(tau_dx: f64, tau_fx: f64, tau_mx: f64) -> Result<Self, MetricsError> {
        if tau_dx <= 0.0 || tau_fx <= 0.0 || tau_mx <= 0.0 {
            return Err(MetricsError::BadThreshold);
        }
        Ok(Self { tau_dx, tau_fx, tau_mx })
    }

    /// The thresholds used to curate the evaluation clips.
    pub fn cdxdb23() -> Self {
        Self {
            tau_dx: 0.022,
            tau_fx: 0.005,
            tau_mx: 0.003,
        }
    }
}

/// A half-open [start, end) span in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
}

/// Slide a window across the stems; keep windows where every stem's RMS
/// clears its threshold. Only fully contained windows are considered.
pub fn select_segments(
    stems: &StemSet,
    thresholds: &RmsThresholds,
    window_s: f64,
    hop_s: f64,
) -> Result<Vec<Segment>, MetricsError> {
    if window_s <= 0.0 || hop_s <= 0.0 {
        return Err(MetricsError::BadWindow { window: window_s, hop: hop_s });
    }
    let rate = stems.mixture.sample_rate() as f64;
    let win = (window_s * rate).round() as usize;
    let hop = ((hop_s * rate).round() as usize).max(1);
    let n = stems.mixture.len();
    if win == 0 || win > n {
        return Ok(Vec::new());
    }

    // Prefix sums of per-frame ‖s(n)‖² make each window's RMS O(1).
    let cumulative = |w: &Waveform| -> Vec<f64> {
        let (l, r) = (w.left(), w.right());
        let mut c = Vec::with_capacity(n + 1);
        c.push(0.0);
        let mut acc = 0.0;
        for i in 0..n {
            acc += l[i] * l[i] + r[i] * r[i];
            c.push(acc);
        }
        c
    };
    let cums = [
        cumulative(&stems.dx),
        cumulative(&stems.fx),
        cumulative(&stems.mx),
    ];
    let taus = [thresholds.tau_dx, thresholds.tau_fx, thresholds.tau_mx];

    let mut accepted = Vec::new();
    let mut start = 0usize;
    while start + win <= n {
        let keep = cums.iter().zip(taus).all(|(c, tau)| {
            let window_rms = ((c[start + win] - c[start]) / win as f64).sqrt();
            window_rms >= tau
        });
        if keep {
            accepted.push(Segment {
                start_s: start as f64 / rate,
                end_s: (start + win) as f64 / rate,
            });
        }
        start += hop;
    }
    Ok(accepted)
}

/// One clip's scores as written to JSON-lines score files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub clip_id: String,
    pub movie_id: String,
    #[serde(flatten)]
    pub score: ClipScore,
}
