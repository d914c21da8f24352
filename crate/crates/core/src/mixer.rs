//! Scene simulation: sample per-class event counts, assets, placements,
//! and gains; render dialogue/effects/music stems whose exact sum is the
//! mixture, with time-stamped annotations. Also the on-the-fly fixed
//! -length batch mixer used for training-style examples.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{
    load_wav, resample, save_wav, AudioError, BitDepth, Waveform, CANONICAL_SAMPLE_RATE,
};
use crate::metrics::{MetricsError, Stem, StemSet};
use crate::sigstats::{integrated_loudness, Loudness, SigStatsError};

/// How many placements are tried before a speech event that cannot be
/// placed without overlap is dropped.
const SPEECH_PLACEMENT_TRIES: usize = 100;

#[derive(Debug, Error)]
pub enum MixerError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    SigStats(#[from] SigStatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("event-count rate must be a positive finite number, got {0}")]
    BadLambda(f64),
    #[error("bad recipe: {0}")]
    BadRecipe(String),
    #[error("catalog has no {0} assets")]
    EmptyClass(SourceClass),
    #[error("bad on-the-fly config: {0}")]
    BadConfig(String),
}

/// The four sampled source categories. Foreground and background effects
/// are rendered into the single FX stem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceClass {
    Speech,
    Music,
    FgEffects,
    BgEffects,
}

impl SourceClass {
    pub const ALL: [SourceClass; 4] = [
        SourceClass::Speech,
        SourceClass::Music,
        SourceClass::FgEffects,
        SourceClass::BgEffects,
    ];

    /// The output stem this class is rendered into.
    pub fn stem(self) -> Stem {
        match self {
            SourceClass::Speech => Stem::Dx,
            SourceClass::Music => Stem::Mx,
            SourceClass::FgEffects | SourceClass::BgEffects => Stem::Fx,
        }
    }
}

impl fmt::Display for SourceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SourceClass::Speech => "speech",
            SourceClass::Music => "music",
            SourceClass::FgEffects => "fg_effects",
            SourceClass::BgEffects => "bg_effects",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetEntry {
    pub path: PathBuf,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

/// Source material available to the mixer, one list per category.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssetCatalog {
    pub speech: Vec<AssetEntry>,
    pub music: Vec<AssetEntry>,
    pub fg_effects: Vec<AssetEntry>,
    pub bg_effects: Vec<AssetEntry>,
}

impl AssetCatalog {
    pub fn class(&self, class: SourceClass) -> &[AssetEntry] {
        match class {
            SourceClass::Speech => &self.speech,
            SourceClass::Music => &self.music,
            SourceClass::FgEffects => &self.fg_effects,
            SourceClass::BgEffects => &self.bg_effects,
        }
    }

    pub fn validate(&self) -> Result<(), MixerError> {
        for class in SourceClass::ALL {
            if self.class(class).iter().any(|a| !(a.duration_s > 0.0)) {
                return Err(MixerError::BadRecipe(format!(
                    "{class} catalog lists a non-positive duration"
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MixerError> {
        let catalog: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MixerError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Event sampling for one source category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventClassParams {
    /// Zero-truncated Poisson rate for the event count.
    pub lambda: f64,
    pub gain_db_lo: f64,
    pub gain_db_hi: f64,
}

/// Loudness statistics a rendered stem is trimmed toward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelTarget {
    pub lufs_mean: f64,
    pub lufs_std: f64,
}

/// Scene-simulation parameters. Event counts and gains are sampled per
/// category; the rendered DX/FX/MX stems are each trimmed to a loudness
/// drawn from the corresponding target statistics (effects are trimmed
/// after the foreground/background merge).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixRecipe {
    pub duration_s: f64,
    pub speech: EventClassParams,
    pub music: EventClassParams,
    pub fg_effects: EventClassParams,
    pub bg_effects: EventClassParams,
    pub dx_level: LevelTarget,
    pub fx_level: LevelTarget,
    pub mx_level: LevelTarget,
    pub seed: u64,
}

impl Default for MixRecipe {
    fn default() -> Self {
        let gain = |lambda| EventClassParams { lambda, gain_db_lo: -10.0, gain_db_hi: 10.0 };
        Self {
            duration_s: 60.0,
            speech: gain(2.0),
            music: gain(1.5),
            fg_effects: gain(3.0),
            bg_effects: gain(1.5),
            dx_level: LevelTarget { lufs_mean: -24.4, lufs_std: 1.3 },
            fx_level: LevelTarget { lufs_mean: -29.7, lufs_std: 1.9 },
            mx_level: LevelTarget { lufs_mean: -31.4, lufs_std: 1.8 },
            seed: 0,
        }
    }
}

impl MixRecipe {
    pub fn validate(&self) -> Result<(), MixerError> {
        if !(self.duration_s > 0.0) {
            return Err(MixerError::BadRecipe(format!(
                "duration must be positive, got {}",
                self.duration_s
            )));
        }
        for (class, params) in self.event_classes() {
            if !(params.lambda > 0.0) || !params.lambda.is_finite() {
                return Err(MixerError::BadLambda(params.lambda));
            }
            if params.gain_db_lo > params.gain_db_hi {
                return Err(MixerError::BadRecipe(format!(
                    "{class} gain range is reversed"
                )));
            }
        }
        for level in [self.dx_level, self.fx_level, self.mx_level] {
            if !(level.lufs_std >= 0.0) || !level.lufs_mean.is_finite() {
                return Err(MixerError::BadRecipe("bad level target".into()));
            }
        }
        Ok(())
    }

    fn event_classes(&self) -> [(SourceClass, EventClassParams); 4] {
        [
            (SourceClass::Speech, self.speech),
            (SourceClass::Music, self.music),
            (SourceClass::FgEffects, self.fg_effects),
            (SourceClass::BgEffects, self.bg_effects),
        ]
    }

    fn level(&self, stem: Stem) -> LevelTarget {
        match stem {
            Stem::Dx => self.dx_level,
            Stem::Fx => self.fx_level,
            Stem::Mx => self.mx_level,
        }
    }
}

/// One placed source in a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEvent {
    pub class: SourceClass,
    pub asset: String,
    pub start_s: f64,
    pub end_s: f64,
    pub gain_db: f64,
}

/// Everything sampled while composing one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAnnotation {
    pub duration_s: f64,
    pub sample_rate: u32,
    pub events: Vec<SceneEvent>,
    /// Broadband trim applied to each rendered stem after event gains,
    /// None where the stem was silent or too short to measure.
    pub dx_trim_db: Option<f64>,
    pub fx_trim_db: Option<f64>,
    pub mx_trim_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Event count k ≥ 1 with P(k) = λ^k e^{−λ} / (k!(1 − e^{−λ})), by CDF
/// inversion.
pub fn sample_count_ztp(lambda: f64, rng: &mut impl Rng) -> Result<usize, MixerError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(MixerError::BadLambda(lambda));
    }
    let u: f64 = rng.gen();
    let mut k = 1usize;
    let mut p = lambda * (-lambda).exp() / (1.0 - (-lambda).exp());
    let mut cdf = p;
    while cdf < u && p > 1e-300 && k < 1_000_000 {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
    }
    Ok(k)
}

struct LoadedAsset {
    wave: Waveform,
    label: String,
}

fn load_asset(entry: &AssetEntry) -> Result<LoadedAsset, MixerError> {
    let wave = load_wav(&entry.path)?;
    let wave = if wave.sample_rate() == CANONICAL_SAMPLE_RATE {
        wave
    } else {
        resample(&wave, CANONICAL_SAMPLE_RATE)?
    };
    Ok(LoadedAsset { wave, label: entry.path.display().to_string() })
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Trim a rendered stem to the target loudness. Returns the applied gain
/// in dB, or None (stem untouched) when the stem is unmeasurable.
fn trim_to_level(
    stem: &mut Waveform,
    target: LevelTarget,
    rng: &mut impl Rng,
) -> Result<Option<f64>, MixerError> {
    let desired = if target.lufs_std > 0.0 {
        Normal::new(target.lufs_mean, target.lufs_std)
            .map_err(|e| MixerError::BadRecipe(format!("level target: {e}")))?
            .sample(rng)
    } else {
        target.lufs_mean
    };
    match integrated_loudness(stem)? {
        Loudness::Lufs(measured) => {
            let trim_db = desired - measured;
            *stem = stem.scaled(10f64.powf(trim_db / 20.0));
            Ok(Some(trim_db))
        }
        Loudness::Unmeasurable => Ok(None),
    }
}

/// Sample and render one scene: per-category event counts from the
/// zero-truncated Poisson, uniform asset picks, uniform gains, uniform
/// placement (speech is placed whole and without overlap), per-stem
/// loudness trim, and the mixture as the exact stem sum.
///
/// Unreadable or unplaceable assets are skipped and recorded as warnings;
/// everything sampled is deterministic under the caller's RNG.
pub fn compose_scene(
    catalog: &AssetCatalog,
    recipe: &MixRecipe,
    rng: &mut impl Rng,
) -> Result<(StemSet, SceneAnnotation), MixerError> {
    recipe.validate()?;
    catalog.validate()?;
    for class in SourceClass::ALL {
        if catalog.class(class).is_empty() {
            return Err(MixerError::EmptyClass(class));
        }
    }

    let rate = CANONICAL_SAMPLE_RATE;
    let n = (recipe.duration_s * rate as f64).round() as usize;
    let mut buffers = [
        Waveform::silence(n, rate), // speech
        Waveform::silence(n, rate), // music
        Waveform::silence(n, rate), // fg effects
        Waveform::silence(n, rate), // bg effects
    ];
    let mut events = Vec::new();
    let mut warnings = Vec::new();
    let mut speech_spans: Vec<(usize, usize)> = Vec::new();

    for (bi, (class, params)) in recipe.event_classes().into_iter().enumerate() {
        let assets = catalog.class(class);
        let count = sample_count_ztp(params.lambda, rng)?;
        for _ in 0..count {
            let entry = &assets[rng.gen_range(0..assets.len())];
            let gain_db = rng.gen_range(params.gain_db_lo..=params.gain_db_hi);
            let asset = match load_asset(entry) {
                Ok(a) => a,
                Err(e) => {
                    warnings.push(format!("skipped {}: {e}", entry.path.display()));
                    continue;
                }
            };
            let mut wave = asset.wave;
            let start = if class == SourceClass::Speech {
                if wave.len() > n {
                    warnings.push(format!(
                        "skipped {}: utterance longer than the scene",
                        asset.label
                    ));
                    continue;
                }
                // Whole utterances, never overlapping each other.
                let mut placed = None;
                for _ in 0..SPEECH_PLACEMENT_TRIES {
                    let candidate = rng.gen_range(0..=n - wave.len());
                    let span = (candidate, candidate + wave.len());
                    if !speech_spans.iter().any(|s| overlaps(*s, span)) {
                        placed = Some(span);
                        break;
                    }
                }
                match placed {
                    Some(span) => {
                        speech_spans.push(span);
                        span.0
                    }
                    None => {
                        warnings.push(format!(
                            "skipped {}: no overlap-free slot found",
                            asset.label
                        ));
                        continue;
                    }
                }
            } else if wave.len() >= n {
                wave = wave.slice(0, n);
                0
            } else {
                rng.gen_range(0..=n - wave.len())
            };

            buffers[bi].add_scaled_at(&wave, start, 10f64.powf(gain_db / 20.0));
            events.push(SceneEvent {
                class,
                asset: asset.label,
                start_s: start as f64 / rate as f64,
                end_s: (start + wave.len()) as f64 / rate as f64,
                gain_db,
            });
        }
    }

    let [speech, music, fg, bg] = buffers;
    let mut dx = speech;
    let mut fx = fg.add(&bg)?;
    let mut mx = music;
    let dx_trim_db = trim_to_level(&mut dx, recipe.level(Stem::Dx), rng)?;
    let fx_trim_db = trim_to_level(&mut fx, recipe.level(Stem::Fx), rng)?;
    let mx_trim_db = trim_to_level(&mut mx, recipe.level(Stem::Mx), rng)?;

    let mixture = dx.add(&fx)?.add(&mx)?;
    let stems = StemSet::new(mixture, dx, fx, mx)?;
    let annotation = SceneAnnotation {
        duration_s: recipe.duration_s,
        sample_rate: rate,
        events,
        dx_trim_db,
        fx_trim_db,
        mx_trim_db,
        warnings,
    };
    Ok((stems, annotation))
}

/// Render `count` scenes in parallel, each from its own RNG stream
/// derived from the recipe seed, so results are reproducible under any
/// thread schedule.
pub fn compose_batch(
    catalog: &AssetCatalog,
    recipe: &MixRecipe,
    count: usize,
) -> Result<Vec<(StemSet, SceneAnnotation)>, MixerError> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
            rng.set_stream(i as u64);
            compose_scene(catalog, recipe, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenePaths {
    pub scene_id: String,
    pub mix: PathBuf,
    pub dx: PathBuf,
    pub fx: PathBuf,
    pub mx: PathBuf,
    pub annotation: PathBuf,
}

/// Write one rendered scene as `{scene_id}/mix.wav`, `dx.wav`, `fx.wav`,
/// `mx.wav` and the annotation JSON.
pub fn write_scene(
    out_dir: impl AsRef<Path>,
    scene_id: &str,
    stems: &StemSet,
    annotation: &SceneAnnotation,
) -> Result<ScenePaths, MixerError> {
    let dir = out_dir.as_ref().join(scene_id);
    std::fs::create_dir_all(&dir)?;
    let paths = ScenePaths {
        scene_id: scene_id.to_string(),
        mix: dir.join("mix.wav"),
        dx: dir.join("dx.wav"),
        fx: dir.join("fx.wav"),
        mx: dir.join("mx.wav"),
        annotation: dir.join("annotation.json"),
    };
    save_wav(&stems.mixture, &paths.mix, BitDepth::Float32)?;
    save_wav(&stems.dx, &paths.dx, BitDepth::Float32)?;
    save_wav(&stems.fx, &paths.fx, BitDepth::Float32)?;
    save_wav(&stems.mx, &paths.mx, BitDepth::Float32)?;
    std::fs::write(&paths.annotation, serde_json::to_string_pretty(annotation)?)?;
    Ok(paths)
}

/// Fixed-length training-example mixing: up to 1 speech, 2 music, and 3
/// effects signals per example, each with a random gain, summed per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnTheFlyConfig {
    pub examples: usize,
    pub max_speech: usize,
    pub max_music: usize,
    pub max_effects: usize,
    pub clip_s: f64,
    pub gain_db_lo: f64,
    pub gain_db_hi: f64,
}

impl Default for OnTheFlyConfig {
    fn default() -> Self {
        Self {
            examples: 1,
            max_speech: 1,
            max_music: 2,
            max_effects: 3,
            clip_s: 3.0,
            gain_db_lo: -10.0,
            gain_db_hi: 10.0,
        }
    }
}

impl OnTheFlyConfig {
    pub fn validate(&self) -> Result<(), MixerError> {
        if !(self.clip_s > 0.0) {
            return Err(MixerError::BadConfig("clip length must be positive".into()));
        }
        if self.gain_db_lo > self.gain_db_hi {
            return Err(MixerError::BadConfig("gain range is reversed".into()));
        }
        Ok(())
    }
}

/// Per-example source counts: uniform over 0..=max for each class.
pub fn sample_onthefly_counts(
    config: &OnTheFlyConfig,
    rng: &mut impl Rng,
) -> (usize, usize, usize) {
    (
        rng.gen_range(0..=config.max_speech),
        rng.gen_range(0..=config.max_music),
        rng.gen_range(0..=config.max_effects),
    )
}

/// Random crop or random placement to exactly `len` samples.
fn fit_to_length(wave: &Waveform, len: usize, rng: &mut impl Rng) -> Waveform {
    if wave.len() >= len {
        let start = rng.gen_range(0..=wave.len() - len);
        wave.slice(start, start + len)
    } else {
        let mut out = Waveform::silence(len, wave.sample_rate());
        let start = rng.gen_range(0..=len - wave.len());
        out.add_scaled_at(wave, start, 1.0);
        out
    }
}

/// Draw fixed-length examples; each class target is the sum of its
/// sampled signals (silent when the count came up zero), and the mixture
/// is the exact sum of the three targets. Effects draw from the pooled
/// foreground and background lists.
pub fn onthefly_batch(
    catalog: &AssetCatalog,
    config: &OnTheFlyConfig,
    rng: &mut impl Rng,
) -> Result<Vec<StemSet>, MixerError> {
    config.validate()?;
    catalog.validate()?;
    let effects: Vec<&AssetEntry> =
        catalog.fg_effects.iter().chain(&catalog.bg_effects).collect();
    if config.max_speech > 0 && catalog.speech.is_empty() {
        return Err(MixerError::EmptyClass(SourceClass::Speech));
    }
    if config.max_music > 0 && catalog.music.is_empty() {
        return Err(MixerError::EmptyClass(SourceClass::Music));
    }
    if config.max_effects > 0 && effects.is_empty() {
        return Err(MixerError::EmptyClass(SourceClass::FgEffects));
    }

    let len = (config.clip_s * CANONICAL_SAMPLE_RATE as f64).round() as usize;
    let mut out = Vec::with_capacity(config.examples);
    for _ in 0..config.examples {
        let (n_speech, n_music, n_effects) = sample_onthefly_counts(config, rng);
        let mut stems = [
            Waveform::silence(len, CANONICAL_SAMPLE_RATE),
            Waveform::silence(len, CANONICAL_SAMPLE_RATE),
            Waveform::silence(len, CANONICAL_SAMPLE_RATE),
        ];
        let draws: [(usize, &[&AssetEntry]); 3] = [
            (n_speech, &effects[..0]), // placeholder, speech picks below
            (n_music, &effects[..0]),
            (n_effects, &effects),
        ];
        // Speech and music pick from their own lists; effects from the pool.
        for (si, (count, pool)) in draws.into_iter().enumerate() {
            for _ in 0..count {
                let entry = match si {
                    0 => &catalog.speech[rng.gen_range(0..catalog.speech.len())],
                    1 => &catalog.music[rng.gen_range(0..catalog.music.len())],
                    _ => pool[rng.gen_range(0..pool.len())],
                };
                let gain_db = rng.gen_range(config.gain_db_lo..=config.gain_db_hi);
                let asset = match load_asset(entry) {
                    Ok(a) => a,
                    Err(e) => {
                        log::warn!("skipped {}: {e}", entry.path.display());
                        continue;
                    }
                };
                let fitted = fit_to_length(&asset.wave, len, rng);
                stems[si].add_scaled_at(&fitted, 0, 10f64.powf(gain_db / 20.0));
            }
        }
        let [dx, mx, fx] = stems;
        let mixture = dx.add(&fx)?.add(&mx)?;
        out.push(StemSet::new(mixture, dx, fx, mx)?);
    }
    Ok(out)
}
