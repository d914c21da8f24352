//! Dataset manifests, end-to-end evaluation runs, phase partitioning,
//! leaderboard ranking, and hidden-vs-visible overfitting traces.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{load_wav, AudioError, Waveform};
use crate::metrics::{
    aggregate, global_sdr_clip, sdr_source, ClipOutcome, ClipScore, EstimateSet, MetricsError,
    ScoreRecord, SourceSdr, Stem, StemSet, SDR_CLAMP_DB,
};
use crate::postprocess::{PostprocessConfig, PostprocessError};

/// Participants choose this many submissions for full-set evaluation.
pub const DEFAULT_SELECT_N: usize = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Postprocess(#[from] PostprocessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("duplicate clip id {0:?} in manifest")]
    DuplicateClipId(String),
    #[error("partition sizes sum to {requested} but the manifest has {movies} movies")]
    BadPartition { movies: usize, requested: usize },
    #[error("submission history is empty")]
    EmptyHistory,
    #[error("submission {submission_id:?} has no clips in the {group} group")]
    MissingCoverage { submission_id: String, group: &'static str },
    #[error("no participants to rank")]
    EmptyLeaderboard,
    #[error("participant {participant:?} selected {got} submissions, limit is {allowed}")]
    TooManySelected { participant: String, allowed: usize, got: usize },
    #[error("participant {0:?} has no submissions")]
    NoSubmissions(String),
}

/// One clip's audio on disk: the mixture and its three reference stems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestClip {
    pub clip_id: String,
    pub movie_id: String,
    pub mixture: PathBuf,
    pub dx: PathBuf,
    pub fx: PathBuf,
    pub mx: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMovie {
    pub movie_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genre: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub clips: Vec<ManifestClip>,
    #[serde(default)]
    pub movies: Vec<ManifestMovie>,
}

impl DatasetManifest {
    /// Clip ids must be unique. A missing movie table is filled in from
    /// the clips.
    pub fn new(
        clips: Vec<ManifestClip>,
        movies: Vec<ManifestMovie>,
    ) -> Result<Self, HarnessError> {
        let mut seen = std::collections::HashSet::new();
        for clip in &clips {
            if !seen.insert(clip.clip_id.clone()) {
                return Err(HarnessError::DuplicateClipId(clip.clip_id.clone()));
            }
        }
        let mut manifest = Self { clips, movies };
        if manifest.movies.is_empty() {
            manifest.movies = manifest
                .movie_ids()
                .into_iter()
                .map(|movie_id| ManifestMovie { movie_id, genre: None, year: None })
                .collect();
        }
        Ok(manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let parsed: Self = serde_json::from_str(&text)?;
        Self::new(parsed.clips, parsed.movies)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Distinct movie ids, sorted, from the movie table or the clips.
    pub fn movie_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = if self.movies.is_empty() {
            self.clips.iter().map(|c| c.movie_id.clone()).collect()
        } else {
            self.movies.iter().map(|m| m.movie_id.clone()).collect()
        };
        ids.sort();
        ids.dedup();
        ids
    }
}

/// A clip that could not be scored normally, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFlag {
    pub clip_id: String,
    pub reason: String,
}

/// One scored submission over a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub submission_id: String,
    /// Unix seconds; orders submissions for tie-breaking.
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<String>,
    pub scores: Vec<ScoreRecord>,
    #[serde(default)]
    pub flags: Vec<ClipFlag>,
    /// Mean over scored clips; absent when nothing was scorable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<ClipScore>,
}

impl SubmissionRecord {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Mean clip score over a subset of movies; None if the subset is
    /// empty.
    pub fn mean_over_movies(&self, movies: &[String]) -> Option<ClipScore> {
        let subset: Vec<&ScoreRecord> = self
            .scores
            .iter()
            .filter(|r| movies.iter().any(|m| *m == r.movie_id))
            .collect();
        aggregate(subset.iter().map(|r| &r.score)).ok()
    }
}

fn load_stem_set(clip: &ManifestClip) -> Result<StemSet, HarnessError> {
    let mixture = load_wav(&clip.mixture)?;
    let dx = load_wav(&clip.dx)?;
    let fx = load_wav(&clip.fx)?;
    let mx = load_wav(&clip.mx)?;
    Ok(StemSet::new(mixture, dx, fx, mx)?)
}

/// Score a submission directory against a manifest.
///
/// Estimates live at `{estimates_root}/{clip_id}/{dx,fx,mx}.wav`. A
/// missing or unreadable estimate floors that source at −100 dB and flags
/// the clip rather than failing the run (the post chain needs a complete
/// set, so partial clips are scored raw); an unreadable reference floors
/// the whole clip; a clip whose reference stems carry no energy is
/// excluded from the aggregate and flagged. Scoring is parallel per clip;
/// the report is sorted by clip id so output is stable.
pub fn evaluate(
    manifest: &DatasetManifest,
    estimates_root: &Path,
    config: &PostprocessConfig,
    submission_id: &str,
) -> Result<SubmissionRecord, HarnessError> {
    enum ClipResult {
        Scored(ScoreRecord),
        Flagged(ScoreRecord, ClipFlag),
        Skipped(ClipFlag),
    }

    let score_clip = |clip: &ManifestClip| -> ClipResult {
        let record = |score: ClipScore| ScoreRecord {
            clip_id: clip.clip_id.clone(),
            movie_id: clip.movie_id.clone(),
            score,
        };
        let floored = |reason: String| {
            ClipResult::Flagged(
                record(ClipScore::floor()),
                ClipFlag { clip_id: clip.clip_id.clone(), reason },
            )
        };
        let targets = match load_stem_set(clip) {
            Ok(t) => t,
            Err(e) => return floored(format!("reference unreadable: {e}")),
        };

        let dir = estimates_root.join(&clip.clip_id);
        let mut loaded: [Option<Waveform>; 3] = [None, None, None];
        let mut unreadable: Vec<String> = Vec::new();
        for (i, stem) in Stem::ALL.into_iter().enumerate() {
            let outcome = load_wav(dir.join(format!("{stem}.wav")))
                .map_err(HarnessError::from)
                .and_then(|wave| {
                    targets.mixture.check_aligned(&wave)?;
                    Ok(wave)
                });
            match outcome {
                Ok(wave) => loaded[i] = Some(wave),
                Err(e) => unreadable.push(format!("{stem} ({e})")),
            }
        }

        if unreadable.is_empty() {
            let [dx, fx, mx] = loaded.map(Option::unwrap);
            let estimates = match EstimateSet::new(dx, fx, mx) {
                Ok(est) => est,
                Err(e) => return floored(format!("estimate unreadable: {e}")),
            };
            let estimates = match config.apply(&targets.mixture, estimates) {
                Ok(est) => est,
                Err(e) => return floored(format!("post-processing failed: {e}")),
            };
            match global_sdr_clip(&targets, &estimates) {
                Ok(ClipOutcome::Scored(score)) => ClipResult::Scored(record(score)),
                Ok(ClipOutcome::UndefinedTarget(stems)) => ClipResult::Skipped(ClipFlag {
                    clip_id: clip.clip_id.clone(),
                    reason: format!("undefined target (silent reference): {stems:?}"),
                }),
                Err(e) => floored(format!("scoring failed: {e}")),
            }
        } else {
            // Partial submission: present sources scored without the post
            // chain, absent ones at the clamp floor.
            let mut undefined = Vec::new();
            let mut values = [-SDR_CLAMP_DB; 3];
            for (i, stem) in Stem::ALL.into_iter().enumerate() {
                match &loaded[i] {
                    Some(estimate) => match sdr_source(targets.stem(stem), estimate) {
                        Ok(SourceSdr::Db(v)) => values[i] = v,
                        Ok(SourceSdr::UndefinedTarget) => undefined.push(stem),
                        Err(e) => return floored(format!("scoring failed: {e}")),
                    },
                    None => {
                        if targets.stem(stem).energy() == 0.0 {
                            undefined.push(stem);
                        }
                    }
                }
            }
            if !undefined.is_empty() {
                return ClipResult::Skipped(ClipFlag {
                    clip_id: clip.clip_id.clone(),
                    reason: format!("undefined target (silent reference): {undefined:?}"),
                });
            }
            ClipResult::Flagged(
                record(ClipScore::new(values[0], values[1], values[2])),
                ClipFlag {
                    clip_id: clip.clip_id.clone(),
                    reason: format!("estimates floored: {}", unreadable.join(", ")),
                },
            )
        }
    };

    let results: Vec<ClipResult> = manifest.clips.par_iter().map(score_clip).collect();

    let mut scores = Vec::new();
    let mut flags = Vec::new();
    for result in results {
        match result {
            ClipResult::Scored(record) => scores.push(record),
            ClipResult::Flagged(record, flag) => {
                scores.push(record);
                flags.push(flag);
            }
            ClipResult::Skipped(flag) => flags.push(flag),
        }
    }
    scores.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    flags.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    let aggregate = aggregate(scores.iter().map(|r| &r.score)).ok();

    Ok(SubmissionRecord {
        submission_id: submission_id.to_string(),
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        phase: None,
        scores,
        flags,
        aggregate,
    })
}

/// Near-equal group sizes for n movies, smallest groups first: 10 movies
/// over three phases gives [3, 3, 4], eleven gives [3, 4, 4].
pub fn near_equal_sizes(n: usize, groups: usize) -> Vec<usize> {
    let base = n / groups;
    let rem = n % groups;
    (0..groups)
        .map(|i| if i >= groups - rem { base + 1 } else { base })
        .collect()
}

/// Split the manifest's movies into groups of the given sizes,
/// deterministically under the seed. Clips of one movie never straddle
/// groups.
pub fn phase_partition(
    manifest: &DatasetManifest,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<Vec<String>>, HarnessError> {
    let mut movies = manifest.movie_ids();
    let requested: usize = sizes.iter().sum();
    if requested != movies.len() {
        return Err(HarnessError::BadPartition { movies: movies.len(), requested });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    movies.shuffle(&mut rng);
    let mut groups = Vec::with_capacity(sizes.len());
    let mut rest = movies.as_slice();
    for &size in sizes {
        let (group, tail) = rest.split_at(size);
        groups.push(group.to_vec());
        rest = tail;
    }
    Ok(groups)
}

/// One submission's hidden-minus-visible mean SDR gap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverfitPoint {
    pub submission_id: String,
    pub diff_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverfitTrace {
    pub points: Vec<OverfitPoint>,
    /// Least-squares slope of the gap over the traced submissions
    /// (dB per submission); negative means the visible set is being
    /// overfit. None with fewer than two points.
    pub slope_db_per_submission: Option<f64>,
}

/// Chronological hidden-minus-visible gaps for a submission history, and
/// the fitted slope over the last `window` submissions (all of them when
/// `window` is None).
pub fn overfit_trace(
    history: &[SubmissionRecord],
    visible_movies: &[String],
    hidden_movies: &[String],
    window: Option<usize>,
) -> Result<OverfitTrace, HarnessError> {
    if history.is_empty() {
        return Err(HarnessError::EmptyHistory);
    }
    let mut points = Vec::with_capacity(history.len());
    for record in history {
        let visible = record.mean_over_movies(visible_movies).ok_or_else(|| {
            HarnessError::MissingCoverage {
                submission_id: record.submission_id.clone(),
                group: "visible",
            }
        })?;
        let hidden = record.mean_over_movies(hidden_movies).ok_or_else(|| {
            HarnessError::MissingCoverage {
                submission_id: record.submission_id.clone(),
                group: "hidden",
            }
        })?;
        points.push(OverfitPoint {
            submission_id: record.submission_id.clone(),
            diff_db: hidden.mean - visible.mean,
        });
    }

    let tail = match window {
        Some(k) if k < points.len() => &points[points.len() - k..],
        _ => &points[..],
    };
    let slope = fit_slope(tail.iter().map(|p| p.diff_db));
    Ok(OverfitTrace { points, slope_db_per_submission: slope })
}

/// Least-squares slope of y over x = 0, 1, 2, …; None for fewer than two
/// points.
fn fit_slope(ys: impl IntoIterator<Item = f64>) -> Option<f64> {
    let ys: Vec<f64> = ys.into_iter().collect();
    let n = ys.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let x_mean = (nf - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / nf;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - x_mean;
        num += dx * (y - y_mean);
        den += dx * dx;
    }
    Some(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderboardEntry {
    pub participant: String,
    pub rank: usize,
    pub mean_db: f64,
    pub dx_db: f64,
    pub fx_db: f64,
    pub mx_db: f64,
    pub submission_id: String,
}

/// Rank participants by the best of their selected submissions (full-set
/// mean SDR, descending). A participant may select at most `select_n`
/// submissions. Ties go to the earlier timestamp.
pub fn leaderboard(
    selections: &BTreeMap<String, Vec<SubmissionRecord>>,
    select_n: usize,
) -> Result<Vec<LeaderboardEntry>, HarnessError> {
    if selections.is_empty() {
        return Err(HarnessError::EmptyLeaderboard);
    }
    let mut rows = Vec::with_capacity(selections.len());
    for (participant, submissions) in selections {
        if submissions.is_empty() {
            return Err(HarnessError::NoSubmissions(participant.clone()));
        }
        if submissions.len() > select_n {
            return Err(HarnessError::TooManySelected {
                participant: participant.clone(),
                allowed: select_n,
                got: submissions.len(),
            });
        }
        let mut best: Option<(&SubmissionRecord, ClipScore)> = None;
        for record in submissions {
            let score = aggregate(record.scores.iter().map(|r| &r.score))?;
            let better = match &best {
                None => true,
                Some((held, held_score)) => {
                    score.mean > held_score.mean
                        || (score.mean == held_score.mean && record.timestamp < held.timestamp)
                }
            };
            if better {
                best = Some((record, score));
            }
        }
        let (record, score) = best.unwrap();
        rows.push((participant.clone(), record, score));
    }
    rows.sort_by(|a, b| {
        b.2.mean
            .partial_cmp(&a.2.mean)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.timestamp.cmp(&b.1.timestamp))
            .then(a.0.cmp(&b.0))
    });
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, (participant, record, score))| LeaderboardEntry {
            participant,
            rank: i + 1,
            mean_db: score.mean,
            dx_db: score.sdr_dx,
            fx_db: score.sdr_fx,
            mx_db: score.sdr_mx,
            submission_id: record.submission_id.clone(),
        })
        .collect())
}

fn csv_to_string(writer: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(writer.into_inner().expect("csv flush")).expect("csv utf8")
}

/// The evaluation report's CSV mirror: one row per clip plus an AGGREGATE
/// row.
pub fn submission_csv(record: &SubmissionRecord) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["clip_id", "movie_id", "dx_db", "fx_db", "mx_db", "mean_db"])
        .expect("csv header");
    for r in &record.scores {
        w.write_record([
            r.clip_id.as_str(),
            r.movie_id.as_str(),
            &format!("{:.6}", r.score.sdr_dx),
            &format!("{:.6}", r.score.sdr_fx),
            &format!("{:.6}", r.score.sdr_mx),
            &format!("{:.6}", r.score.mean),
        ])
        .expect("csv row");
    }
    if let Some(agg) = &record.aggregate {
        w.write_record([
            "AGGREGATE",
            "",
            &format!("{:.6}", agg.sdr_dx),
            &format!("{:.6}", agg.sdr_fx),
            &format!("{:.6}", agg.sdr_mx),
            &format!("{:.6}", agg.mean),
        ])
        .expect("csv row");
    }
    csv_to_string(w)
}

/// The leaderboard's CSV mirror.
pub fn leaderboard_csv(entries: &[LeaderboardEntry]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rank", "participant", "mean_db", "dx_db", "fx_db", "mx_db", "submission_id"])
        .expect("csv header");
    for e in entries {
        w.write_record([
            &e.rank.to_string(),
            e.participant.as_str(),
            &format!("{:.6}", e.mean_db),
            &format!("{:.6}", e.dx_db),
            &format!("{:.6}", e.fx_db),
            &format!("{:.6}", e.mx_db),
            e.submission_id.as_str(),
        ])
        .expect("csv row");
    }
    csv_to_string(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{save_wav, BitDepth};
    use crate::synth;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::path::Path;

    fn noise(seed: u64, amp: f64, len: usize) -> Waveform {
        synth::white_noise(&mut ChaCha8Rng::seed_from_u64(seed), amp, 44_100, len)
    }

    /// A two-movie, four-clip manifest of half-second synthetic stems,
    /// written under `root/refs`.
    fn synthetic_manifest(root: &Path) -> (DatasetManifest, Vec<StemSet>) {
        let refs = root.join("refs");
        let mut clips = Vec::new();
        let mut stem_sets = Vec::new();
        for i in 0..4 {
            let clip_id = format!("clip{i}");
            let dir = refs.join(&clip_id);
            std::fs::create_dir_all(&dir).unwrap();
            let dx = noise(100 + i, 0.3, 22_050);
            let fx = noise(200 + i, 0.25, 22_050);
            let mx = noise(300 + i, 0.2, 22_050);
            let mixture = dx.add(&fx).unwrap().add(&mx).unwrap();
            for (name, wave) in
                [("mixture", &mixture), ("dx", &dx), ("fx", &fx), ("mx", &mx)]
            {
                save_wav(wave, dir.join(format!("{name}.wav")), BitDepth::Float32).unwrap();
            }
            clips.push(ManifestClip {
                clip_id: clip_id.clone(),
                movie_id: format!("movie{}", i / 2),
                mixture: dir.join("mixture.wav"),
                dx: dir.join("dx.wav"),
                fx: dir.join("fx.wav"),
                mx: dir.join("mx.wav"),
            });
            stem_sets.push(StemSet::new(mixture, dx, fx, mx).unwrap());
        }
        (DatasetManifest::new(clips, Vec::new()).unwrap(), stem_sets)
    }

    fn write_estimates(root: &Path, clip_id: &str, est: [&Waveform; 3]) {
        let dir = root.join(clip_id);
        std::fs::create_dir_all(&dir).unwrap();
        for (name, wave) in ["dx.wav", "fx.wav", "mx.wav"].iter().zip(est) {
            save_wav(wave, dir.join(name), BitDepth::Float32).unwrap();
        }
    }

    fn record(id: &str, timestamp: u64, clips: &[(&str, &str, f64)]) -> SubmissionRecord {
        let scores: Vec<ScoreRecord> = clips
            .iter()
            .map(|(clip, movie, sdr)| ScoreRecord {
                clip_id: clip.to_string(),
                movie_id: movie.to_string(),
                score: ClipScore::new(*sdr, *sdr, *sdr),
            })
            .collect();
        let aggregate = aggregate(scores.iter().map(|r| &r.score)).ok();
        SubmissionRecord {
            submission_id: id.to_string(),
            timestamp,
            phase: None,
            scores,
            flags: Vec::new(),
            aggregate,
        }
    }

    #[test]
    fn manifest_rejects_duplicate_ids() {
        let clip = ManifestClip {
            clip_id: "a".into(),
            movie_id: "m".into(),
            mixture: "x.wav".into(),
            dx: "d.wav".into(),
            fx: "f.wav".into(),
            mx: "m.wav".into(),
        };
        let err = DatasetManifest::new(vec![clip.clone(), clip], Vec::new());
        assert!(matches!(err, Err(HarnessError::DuplicateClipId(_))));
    }

    #[test]
    fn manifest_roundtrips_and_fills_movies() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, _) = synthetic_manifest(dir.path());
        assert_eq!(manifest.movie_ids(), vec!["movie0", "movie1"]);
        let path = dir.path().join("manifest.json");
        manifest.save(&path).unwrap();
        assert_eq!(DatasetManifest::load(&path).unwrap(), manifest);
    }

    #[test]
    fn oracle_estimates_hit_the_ceiling() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, _) = synthetic_manifest(dir.path());
        let est_root = dir.path().join("est");
        for clip in &manifest.clips {
            let dx = load_wav(&clip.dx).unwrap();
            let fx = load_wav(&clip.fx).unwrap();
            let mx = load_wav(&clip.mx).unwrap();
            write_estimates(&est_root, &clip.clip_id, [&dx, &fx, &mx]);
        }
        let record = evaluate(&manifest, &est_root, &PostprocessConfig::none(), "oracle").unwrap();
        assert_eq!(record.scores.len(), 4);
        assert!(record.flags.is_empty());
        for r in &record.scores {
            assert_eq!(r.score.mean, 100.0);
        }
        assert_eq!(record.aggregate.unwrap().mean, 100.0);
    }

    #[test]
    fn missing_estimates_floor_and_flag() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, stem_sets) = synthetic_manifest(dir.path());
        let est_root = dir.path().join("est");
        // Only clip0 gets estimates; the rest are missing.
        write_estimates(
            &est_root,
            "clip0",
            [&stem_sets[0].dx, &stem_sets[0].fx, &stem_sets[0].mx],
        );
        let record = evaluate(&manifest, &est_root, &PostprocessConfig::none(), "partial").unwrap();
        assert_eq!(record.scores.len(), 4);
        assert_eq!(record.flags.len(), 3);
        assert_eq!(record.scores[0].score.mean, 100.0);
        for r in &record.scores[1..] {
            assert_eq!(r.score.mean, -100.0);
        }
        assert!(record.flags.iter().all(|f| f.reason.contains("estimates floored")));
    }

    #[test]
    fn dialogue_only_submission_floors_the_other_sources() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, stem_sets) = synthetic_manifest(dir.path());
        let est_root = dir.path().join("est");
        for (clip, stems) in manifest.clips.iter().zip(&stem_sets) {
            let clip_dir = est_root.join(&clip.clip_id);
            std::fs::create_dir_all(&clip_dir).unwrap();
            save_wav(&stems.dx, clip_dir.join("dx.wav"), BitDepth::Float32).unwrap();
        }
        let record = evaluate(&manifest, &est_root, &PostprocessConfig::none(), "dx-only").unwrap();
        assert_eq!(record.scores.len(), 4);
        assert_eq!(record.flags.len(), 4);
        for r in &record.scores {
            assert_eq!(r.score.sdr_dx, 100.0);
            assert_eq!(r.score.sdr_fx, -100.0);
            assert_eq!(r.score.sdr_mx, -100.0);
        }
        let agg = record.aggregate.unwrap();
        assert_eq!(agg.mean, -100.0 / 3.0);
    }

    #[test]
    fn evaluate_is_clip_order_independent() {
        let dir = tempfile::tempdir().unwrap();
        let (mut manifest, stem_sets) = synthetic_manifest(dir.path());
        let est_root = dir.path().join("est");
        for (clip, stems) in manifest.clips.iter().zip(&stem_sets) {
            let third = stems.mixture.scaled(1.0 / 3.0);
            write_estimates(&est_root, &clip.clip_id, [&third, &third, &third]);
        }
        let a = evaluate(&manifest, &est_root, &PostprocessConfig::none(), "s").unwrap();
        manifest.clips.reverse();
        let b = evaluate(&manifest, &est_root, &PostprocessConfig::none(), "s").unwrap();
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.aggregate, b.aggregate);
    }

    #[test]
    fn postprocess_config_changes_scores() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, stem_sets) = synthetic_manifest(dir.path());
        let est_root = dir.path().join("est");
        // Estimates at half scale: LS rescaling recovers them.
        for (clip, stems) in manifest.clips.iter().zip(&stem_sets) {
            write_estimates(
                &est_root,
                &clip.clip_id,
                [&stems.dx.scaled(0.5), &stems.fx.scaled(0.5), &stems.mx.scaled(0.5)],
            );
        }
        let plain = evaluate(&manifest, &est_root, &PostprocessConfig::none(), "s").unwrap();
        let scaled = evaluate(&manifest, &est_root, &PostprocessConfig::baseline(), "s").unwrap();
        assert!(
            scaled.aggregate.unwrap().mean > plain.aggregate.unwrap().mean + 20.0,
            "LS rescaling should recover half-scale estimates: {} vs {}",
            scaled.aggregate.unwrap().mean,
            plain.aggregate.unwrap().mean
        );
    }

    #[test]
    fn partition_sizes_and_determinism() {
        let clips: Vec<ManifestClip> = (0..11)
            .map(|i| ManifestClip {
                clip_id: format!("c{i}"),
                movie_id: format!("m{i:02}"),
                mixture: "x.wav".into(),
                dx: "d.wav".into(),
                fx: "f.wav".into(),
                mx: "m.wav".into(),
            })
            .collect();
        let manifest = DatasetManifest::new(clips, Vec::new()).unwrap();
        let sizes = near_equal_sizes(11, 3);
        assert_eq!(sizes, vec![3, 4, 4]);
        assert_eq!(near_equal_sizes(10, 3), vec![3, 3, 4]);
        let groups = phase_partition(&manifest, &sizes, 7).unwrap();
        assert_eq!(groups.iter().map(Vec::len).collect::<Vec<_>>(), sizes);
        let mut all: Vec<String> = groups.concat();
        all.sort();
        assert_eq!(all, manifest.movie_ids());
        assert_eq!(groups, phase_partition(&manifest, &sizes, 7).unwrap());
        assert_ne!(groups, phase_partition(&manifest, &sizes, 8).unwrap());

        assert!(matches!(
            phase_partition(&manifest, &[3, 3], 7),
            Err(HarnessError::BadPartition { movies: 11, requested: 6 })
        ));

        let single = DatasetManifest::new(
            vec![ManifestClip {
                clip_id: "c".into(),
                movie_id: "solo".into(),
                mixture: "x.wav".into(),
                dx: "d.wav".into(),
                fx: "f.wav".into(),
                mx: "m.wav".into(),
            }],
            Vec::new(),
        )
        .unwrap();
        assert_eq!(phase_partition(&single, &[1], 0).unwrap(), vec![vec!["solo"]]);
    }

    #[test]
    fn overfit_trace_flat_history_is_zero() {
        let visible = vec!["mv".to_string()];
        let hidden = vec!["mh".to_string()];
        let history: Vec<SubmissionRecord> = (0..5)
            .map(|i| {
                record(
                    &format!("s{i}"),
                    i,
                    &[("c0", "mv", 3.0), ("c1", "mh", 3.0)],
                )
            })
            .collect();
        let trace = overfit_trace(&history, &visible, &hidden, None).unwrap();
        assert!(trace.points.iter().all(|p| p.diff_db == 0.0));
        assert_eq!(trace.slope_db_per_submission, Some(0.0));
    }

    #[test]
    fn overfit_trace_detects_divergence() {
        let visible = vec!["mv".to_string()];
        let hidden = vec!["mh".to_string()];
        // Visible score rises, hidden stays flat: the gap shrinks.
        let history: Vec<SubmissionRecord> = (0..6)
            .map(|i| {
                record(
                    &format!("s{i}"),
                    i,
                    &[("c0", "mv", 2.0 + 0.5 * i as f64), ("c1", "mh", 2.0)],
                )
            })
            .collect();
        let trace = overfit_trace(&history, &visible, &hidden, None).unwrap();
        for pair in trace.points.windows(2) {
            assert!(pair[1].diff_db < pair[0].diff_db);
        }
        let slope = trace.slope_db_per_submission.unwrap();
        assert_abs_diff_eq!(slope, -0.5, epsilon = 1e-12);

        // Windowed slope over the last 3 only.
        let windowed = overfit_trace(&history, &visible, &hidden, Some(3)).unwrap();
        assert_abs_diff_eq!(windowed.slope_db_per_submission.unwrap(), -0.5, epsilon = 1e-12);

        let single = overfit_trace(&history[..1], &visible, &hidden, None).unwrap();
        assert_eq!(single.points.len(), 1);
        assert_eq!(single.slope_db_per_submission, None);

        assert!(matches!(
            overfit_trace(&[], &visible, &hidden, None),
            Err(HarnessError::EmptyHistory)
        ));
        assert!(matches!(
            overfit_trace(&history, &["absent".to_string()], &hidden, None),
            Err(HarnessError::MissingCoverage { group: "visible", .. })
        ));
    }

    #[test]
    fn leaderboard_ranks_by_mean_and_breaks_ties_by_time() {
        // The published top-5 means reproduce ranks 1-5.
        let means = [4.345, 4.237, 4.144, 3.871, 3.537];
        let mut selections = BTreeMap::new();
        for (i, mean) in means.iter().enumerate() {
            selections.insert(
                format!("team{i}"),
                vec![record(&format!("sub{i}"), 10 + i as u64, &[("c", "m", *mean)])],
            );
        }
        let entries = leaderboard(&selections, DEFAULT_SELECT_N).unwrap();
        for (i, e) in entries.iter().enumerate() {
            assert_eq!(e.rank, i + 1);
            assert_eq!(e.participant, format!("team{i}"));
            assert_abs_diff_eq!(e.mean_db, means[i], epsilon = 1e-12);
        }

        // Best-of-three within a participant.
        let mut multi = BTreeMap::new();
        multi.insert(
            "solo".to_string(),
            vec![
                record("a", 1, &[("c", "m", 1.0)]),
                record("b", 2, &[("c", "m", 5.0)]),
                record("c", 3, &[("c", "m", 3.0)]),
            ],
        );
        let entries = leaderboard(&multi, 3).unwrap();
        assert_eq!(entries[0].submission_id, "b");
        assert_eq!(entries[0].rank, 1);

        // Equal means: earlier timestamp wins, both across and within.
        let mut tied = BTreeMap::new();
        tied.insert("late".to_string(), vec![record("l", 20, &[("c", "m", 2.0)])]);
        tied.insert("early".to_string(), vec![record("e", 10, &[("c", "m", 2.0)])]);
        let entries = leaderboard(&tied, 3).unwrap();
        assert_eq!(entries[0].participant, "early");
        assert_eq!(entries[1].participant, "late");

        let mut over = BTreeMap::new();
        over.insert(
            "greedy".to_string(),
            (0..4).map(|i| record(&format!("s{i}"), i, &[("c", "m", 1.0)])).collect(),
        );
        assert!(matches!(
            leaderboard(&over, 3),
            Err(HarnessError::TooManySelected { allowed: 3, got: 4, .. })
        ));
    }

    #[test]
    fn csv_mirrors_are_well_formed() {
        let rec = record("s0", 5, &[("c0", "m0", 1.5), ("c,1", "m1", 2.5)]);
        let csv = submission_csv(&rec);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4); // header + 2 clips + aggregate
        assert!(lines[0].starts_with("clip_id,"));
        assert!(lines[2].starts_with("\"c,1\""));
        assert!(lines[3].starts_with("AGGREGATE,,"));

        let mut selections = BTreeMap::new();
        selections.insert("t".to_string(), vec![rec]);
        let csv = leaderboard_csv(&leaderboard(&selections, 3).unwrap());
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("1,t,"));
    }
}
