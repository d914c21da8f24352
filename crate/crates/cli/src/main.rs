//! `cdx` — one binary over the toolkit: score submissions, measure
//! dataset statistics, adapt stems, simulate scenes, rank participants,
//! trace overfitting, and curate evaluation segments. Every subcommand
//! reads a JSON config and writes JSON/CSV reports.
//!
//! Exit codes: 0 success, 1 usage error (bad flags or config), 2 data
//! error (unreadable audio, failed runs).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::Parser;
use serde::Deserialize;

use cdx_core::adapt::{
    adapt_dataset, design_eq_match_filter, loudness_match_offset, AdaptationPlan,
    ClassAdaptation,
};
use cdx_core::audio::load_wav;
use cdx_core::harness::{
    evaluate, leaderboard, leaderboard_csv, overfit_trace, submission_csv, DatasetManifest,
    ManifestClip, SubmissionRecord, DEFAULT_SELECT_N,
};
use cdx_core::metrics::{
    select_segments, RmsThresholds, Segment, StemSet, DEFAULT_CURATION_HOP_S,
    DEFAULT_CURATION_WINDOW_S,
};
use cdx_core::mixer::{compose_batch, write_scene, AssetCatalog, MixRecipe};
use cdx_core::postprocess::PostprocessConfig;
use cdx_core::sigstats::{analyze_class, ClassStatsReport};

#[derive(Parser, Debug)]
#[command(name = "cdx", version, about = "Cinematic demixing evaluation toolkit")]
enum Cli {
    /// Score a submission directory against a dataset manifest
    Eval {
        /// JSON config: {manifest, estimates_root, submission_id, phase?,
        /// postprocess?, report_json?, report_csv?}
        #[arg(long, env = "CDX_EVAL_CONFIG")]
        config: PathBuf,
    },
    /// Measure per-class signal statistics over a manifest
    Stats {
        /// JSON config: {manifest, classes?, out?}
        #[arg(long, env = "CDX_STATS_CONFIG")]
        config: PathBuf,
    },
    /// Re-render a dataset under a loudness/EQ adaptation plan
    Adapt {
        /// JSON config: {manifest, out_dir, plan? | derive?, plan_out?,
        /// manifest_out?, report?}
        #[arg(long, env = "CDX_ADAPT_CONFIG")]
        config: PathBuf,
    },
    /// Simulate scenes from an asset catalog
    Mix {
        /// JSON config: {catalog, out_dir, scenes, recipe?,
        /// scenes_per_movie?, manifest_out?}
        #[arg(long, env = "CDX_MIX_CONFIG")]
        config: PathBuf,
    },
    /// Rank participants by their best selected submission
    Rank {
        /// JSON config: {submissions: [{participant, records}], select_n?,
        /// out_json?, out_csv?}
        #[arg(long, env = "CDX_RANK_CONFIG")]
        config: PathBuf,
    },
    /// Trace the hidden-minus-visible score gap over a submission history
    Overfit {
        /// JSON config: {history, visible_movies, hidden_movies, window?,
        /// out?}
        #[arg(long, env = "CDX_OVERFIT_CONFIG")]
        config: PathBuf,
    },
    /// Select evaluation segments where all stems clear their RMS floors
    Curate {
        /// JSON config: {manifest, thresholds?, window_s?, hop_s?, out?}
        #[arg(long, env = "CDX_CURATE_CONFIG")]
        config: PathBuf,
    },
}

/// Usage errors exit 1, data errors exit 2.
enum CliError {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Data(e.into())
    }
}

fn load_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let run = || -> anyhow::Result<T> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
    };
    run().map_err(CliError::Usage)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("CDX_LOG", "warn"),
    )
    .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here too; they are not errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli {
        Cli::Eval { config } => cmd_eval(load_config(&config)?),
        Cli::Stats { config } => cmd_stats(load_config(&config)?),
        Cli::Adapt { config } => cmd_adapt(load_config(&config)?),
        Cli::Mix { config } => cmd_mix(load_config(&config)?),
        Cli::Rank { config } => cmd_rank(load_config(&config)?),
        Cli::Overfit { config } => cmd_overfit(load_config(&config)?),
        Cli::Curate { config } => cmd_curate(load_config(&config)?),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalConfig {
    manifest: PathBuf,
    estimates_root: PathBuf,
    submission_id: String,
    #[serde(default)]
    phase: Option<String>,
    #[serde(default)]
    postprocess: PostprocessConfig,
    #[serde(default)]
    report_json: Option<PathBuf>,
    #[serde(default)]
    report_csv: Option<PathBuf>,
}

fn cmd_eval(cfg: EvalConfig) -> Result<(), CliError> {
    let manifest = DatasetManifest::load(&cfg.manifest)?;
    let mut record = evaluate(
        &manifest,
        &cfg.estimates_root,
        &cfg.postprocess,
        &cfg.submission_id,
    )?;
    record.phase = cfg.phase;

    if let Some(path) = &cfg.report_json {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(anyhow::Error::from)?;
        }
        record.save(path)?;
    }
    if let Some(path) = &cfg.report_csv {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(anyhow::Error::from)?;
        }
        std::fs::write(path, submission_csv(&record)).map_err(anyhow::Error::from)?;
    }

    println!("submission {}", record.submission_id);
    println!("  clips scored: {}", record.scores.len());
    println!("  flags: {}", record.flags.len());
    match &record.aggregate {
        Some(agg) => println!(
            "  aggregate SDR: mean {:.3} dB (dx {:.3}, fx {:.3}, mx {:.3})",
            agg.mean, agg.sdr_dx, agg.sdr_fx, agg.sdr_mx
        ),
        None => println!("  aggregate SDR: none (no scorable clips)"),
    }
    for flag in &record.flags {
        log::warn!("{}: {}", flag.clip_id, flag.reason);
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsConfig {
    manifest: PathBuf,
    /// Which stem classes to analyze; default all four.
    #[serde(default)]
    classes: Option<Vec<String>>,
    #[serde(default)]
    out: Option<PathBuf>,
}

fn class_paths<'a>(clip: &'a ManifestClip, class: &str) -> anyhow::Result<&'a PathBuf> {
    match class {
        "mixture" => Ok(&clip.mixture),
        "dx" => Ok(&clip.dx),
        "fx" => Ok(&clip.fx),
        "mx" => Ok(&clip.mx),
        other => bail!("unknown stem class {other:?} (expected mixture/dx/fx/mx)"),
    }
}

fn cmd_stats(cfg: StatsConfig) -> Result<(), CliError> {
    let manifest = DatasetManifest::load(&cfg.manifest)?;
    let classes = cfg.classes.unwrap_or_else(|| {
        ["mixture", "dx", "fx", "mx"].map(String::from).to_vec()
    });

    let mut reports: BTreeMap<String, ClassStatsReport> = BTreeMap::new();
    for class in &classes {
        let clips = manifest
            .clips
            .iter()
            .map(|clip| {
                let path = class_paths(clip, class)?;
                load_wav(path).with_context(|| format!("loading {}", path.display()))
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let report = analyze_class(&clips)?;
        match &report.loudness {
            Some(l) => println!(
                "{class}: {} clips, loudness {:.1} ± {:.1} LUFS",
                report.clips, l.mean, l.std
            ),
            None => println!("{class}: {} clips, loudness unmeasurable", report.clips),
        }
        reports.insert(class.clone(), report);
    }

    if let Some(path) = &cfg.out {
        write_json(path, &reports)?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdaptConfig {
    manifest: PathBuf,
    out_dir: PathBuf,
    /// A ready adaptation plan …
    #[serde(default)]
    plan: Option<PathBuf>,
    /// … or derive one from two stats reports.
    #[serde(default)]
    derive: Option<DerivePlan>,
    #[serde(default)]
    plan_out: Option<PathBuf>,
    /// Defaults to {out_dir}/manifest.json.
    #[serde(default)]
    manifest_out: Option<PathBuf>,
    #[serde(default)]
    report: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DerivePlan {
    /// Per-class stats of the dataset being adapted (`cdx stats` output).
    source_stats: PathBuf,
    /// Per-class stats of the dataset to match.
    target_stats: PathBuf,
    #[serde(default = "default_true")]
    loudness: bool,
    #[serde(default = "default_true")]
    eq: bool,
    /// Stem classes to adapt; default dx/fx/mx.
    #[serde(default)]
    classes: Option<Vec<String>>,
}

fn default_true() -> bool {
    true
}

fn derive_plan(spec: &DerivePlan) -> anyhow::Result<AdaptationPlan> {
    let load = |path: &Path| -> anyhow::Result<BTreeMap<String, ClassStatsReport>> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading stats {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    };
    let source = load(&spec.source_stats)?;
    let target = load(&spec.target_stats)?;
    let classes = spec
        .classes
        .clone()
        .unwrap_or_else(|| ["dx", "fx", "mx"].map(String::from).to_vec());

    let mut plan = AdaptationPlan::default();
    for class in &classes {
        let src = source
            .get(class)
            .ok_or_else(|| anyhow!("{} missing class {class:?}", spec.source_stats.display()))?;
        let tgt = target
            .get(class)
            .ok_or_else(|| anyhow!("{} missing class {class:?}", spec.target_stats.display()))?;

        let mut adaptation = ClassAdaptation::default();
        if spec.loudness {
            let (s, t) = (
                src.loudness
                    .ok_or_else(|| anyhow!("source {class} loudness unmeasurable"))?,
                tgt.loudness
                    .ok_or_else(|| anyhow!("target {class} loudness unmeasurable"))?,
            );
            adaptation.loudness_offset_lu = Some(loudness_match_offset(s.mean, t.mean)?);
        }
        if spec.eq {
            let fir = design_eq_match_filter(&src.eq, &tgt.eq)?;
            adaptation.eq_filter_taps = Some(fir.taps().to_vec());
        }
        match class.as_str() {
            "dx" => plan.dx = Some(adaptation),
            "fx" => plan.fx = Some(adaptation),
            "mx" => plan.mx = Some(adaptation),
            other => bail!("unknown stem class {other:?} (expected dx/fx/mx)"),
        }
    }
    plan.validate()?;
    Ok(plan)
}

fn cmd_adapt(cfg: AdaptConfig) -> Result<(), CliError> {
    let plan = match (&cfg.plan, &cfg.derive) {
        (Some(path), None) => AdaptationPlan::load(path)?,
        (None, Some(spec)) => derive_plan(spec)?,
        _ => {
            return Err(CliError::Usage(anyhow!(
                "config must set exactly one of \"plan\" and \"derive\""
            )))
        }
    };
    if let Some(path) = &cfg.plan_out {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(anyhow::Error::from)?;
        }
        plan.save(path)?;
    }

    let manifest = DatasetManifest::load(&cfg.manifest)?;
    let outcome = adapt_dataset(&manifest, &plan, &cfg.out_dir)?;

    let manifest_out = cfg
        .manifest_out
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("manifest.json"));
    outcome.manifest.save(&manifest_out)?;
    if let Some(path) = &cfg.report {
        write_json(path, &outcome)?;
    }

    println!(
        "adapted {} of {} clips into {}",
        outcome.manifest.clips.len(),
        manifest.clips.len(),
        cfg.out_dir.display()
    );
    for failure in &outcome.failures {
        log::warn!("{}: {}", failure.clip_id, failure.reason);
    }
    if !outcome.failures.is_empty() {
        println!("  {} clips failed (see report / warnings)", outcome.failures.len());
    }
    println!("manifest written to {}", manifest_out.display());
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixConfig {
    catalog: PathBuf,
    out_dir: PathBuf,
    scenes: usize,
    #[serde(default)]
    recipe: MixRecipe,
    /// Scenes grouped under one synthetic movie id; default 1.
    #[serde(default = "default_one")]
    scenes_per_movie: usize,
    #[serde(default)]
    manifest_out: Option<PathBuf>,
}

fn default_one() -> usize {
    1
}

fn cmd_mix(cfg: MixConfig) -> Result<(), CliError> {
    if cfg.scenes_per_movie == 0 {
        return Err(CliError::Usage(anyhow!("scenes_per_movie must be at least 1")));
    }
    let catalog = AssetCatalog::load(&cfg.catalog)?;
    let scenes = compose_batch(&catalog, &cfg.recipe, cfg.scenes)?;

    let mut clips = Vec::with_capacity(scenes.len());
    for (i, (stems, annotation)) in scenes.iter().enumerate() {
        let scene_id = format!("scene{i:04}");
        let paths = write_scene(&cfg.out_dir, &scene_id, stems, annotation)?;
        if !annotation.warnings.is_empty() {
            log::warn!("{scene_id}: {}", annotation.warnings.join("; "));
        }
        clips.push(ManifestClip {
            clip_id: scene_id,
            movie_id: format!("movie{:03}", i / cfg.scenes_per_movie),
            mixture: paths.mix,
            dx: paths.dx,
            fx: paths.fx,
            mx: paths.mx,
        });
    }
    let manifest = DatasetManifest::new(clips, Vec::new())?;
    if let Some(path) = &cfg.manifest_out {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(anyhow::Error::from)?;
        }
        manifest.save(path)?;
        println!("manifest written to {}", path.display());
    }
    println!(
        "rendered {} scenes ({} movies) into {}",
        manifest.clips.len(),
        manifest.movie_ids().len(),
        cfg.out_dir.display()
    );
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RankConfig {
    submissions: Vec<ParticipantEntry>,
    #[serde(default = "default_select_n")]
    select_n: usize,
    #[serde(default)]
    out_json: Option<PathBuf>,
    #[serde(default)]
    out_csv: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParticipantEntry {
    participant: String,
    records: Vec<PathBuf>,
}

fn default_select_n() -> usize {
    DEFAULT_SELECT_N
}

fn cmd_rank(cfg: RankConfig) -> Result<(), CliError> {
    let mut selections: BTreeMap<String, Vec<SubmissionRecord>> = BTreeMap::new();
    for entry in &cfg.submissions {
        if selections.contains_key(&entry.participant) {
            return Err(CliError::Usage(anyhow!(
                "participant {:?} listed twice",
                entry.participant
            )));
        }
        let records = entry
            .records
            .iter()
            .map(|p| SubmissionRecord::load(p).map_err(anyhow::Error::from))
            .collect::<anyhow::Result<Vec<_>>>()?;
        selections.insert(entry.participant.clone(), records);
    }

    let entries = leaderboard(&selections, cfg.select_n)?;
    for e in &entries {
        println!(
            "{:>3}. {:<24} {:>8.3} dB  (dx {:.3}, fx {:.3}, mx {:.3})  [{}]",
            e.rank, e.participant, e.mean_db, e.dx_db, e.fx_db, e.mx_db, e.submission_id
        );
    }
    if let Some(path) = &cfg.out_json {
        write_json(path, &entries)?;
    }
    if let Some(path) = &cfg.out_csv {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(anyhow::Error::from)?;
        }
        std::fs::write(path, leaderboard_csv(&entries)).map_err(anyhow::Error::from)?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OverfitConfig {
    /// Submission record files, oldest first.
    history: Vec<PathBuf>,
    visible_movies: Vec<String>,
    hidden_movies: Vec<String>,
    #[serde(default)]
    window: Option<usize>,
    #[serde(default)]
    out: Option<PathBuf>,
}

fn cmd_overfit(cfg: OverfitConfig) -> Result<(), CliError> {
    let history = cfg
        .history
        .iter()
        .map(|p| SubmissionRecord::load(p).map_err(anyhow::Error::from))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let trace = overfit_trace(&history, &cfg.visible_movies, &cfg.hidden_movies, cfg.window)?;

    for point in &trace.points {
        println!("{:<24} hidden − visible = {:+.3} dB", point.submission_id, point.diff_db);
    }
    match trace.slope_db_per_submission {
        Some(slope) => println!("slope: {slope:+.4} dB/submission"),
        None => println!("slope: undefined (fewer than two points)"),
    }
    if let Some(path) = &cfg.out {
        write_json(path, &trace)?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurateConfig {
    manifest: PathBuf,
    /// Per-stem RMS floors; defaults to the challenge's values.
    #[serde(default)]
    thresholds: Option<RmsThresholds>,
    #[serde(default = "default_window_s")]
    window_s: f64,
    #[serde(default = "default_hop_s")]
    hop_s: f64,
    #[serde(default)]
    out: Option<PathBuf>,
}

fn default_window_s() -> f64 {
    DEFAULT_CURATION_WINDOW_S
}

fn default_hop_s() -> f64 {
    DEFAULT_CURATION_HOP_S
}

#[derive(Debug, serde::Serialize)]
struct ClipCuration {
    clip_id: String,
    movie_id: String,
    segments: Vec<Segment>,
}

fn cmd_curate(cfg: CurateConfig) -> Result<(), CliError> {
    let manifest = DatasetManifest::load(&cfg.manifest)?;
    let thresholds = cfg.thresholds.unwrap_or_else(RmsThresholds::cdxdb23);

    let mut report = Vec::with_capacity(manifest.clips.len());
    for clip in &manifest.clips {
        let stems = StemSet::new(
            load_wav(&clip.mixture)?,
            load_wav(&clip.dx)?,
            load_wav(&clip.fx)?,
            load_wav(&clip.mx)?,
        )?;
        let segments = select_segments(&stems, &thresholds, cfg.window_s, cfg.hop_s)?;
        report.push(ClipCuration {
            clip_id: clip.clip_id.clone(),
            movie_id: clip.movie_id.clone(),
            segments,
        });
    }

    let kept = report.iter().filter(|c| !c.segments.is_empty()).count();
    println!(
        "{kept} of {} clips have at least one accepted {}s window",
        report.len(),
        cfg.window_s
    );
    if let Some(path) = &cfg.out {
        write_json(path, &report)?;
        println!("report written to {}", path.display());
    }
    Ok(())
}
