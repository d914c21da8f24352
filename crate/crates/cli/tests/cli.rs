//! End-to-end runs of the `cdx` binary: every subcommand, the exit-code
//! contract, and the env-var config fallback.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cdx_core::audio::{save_wav, BitDepth};
use cdx_core::harness::{DatasetManifest, SubmissionRecord};
use cdx_core::metrics::{ClipScore, ScoreRecord};
use cdx_core::synth;

fn cdx() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cdx"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = cdx().args(args).output().expect("spawn cdx");
    assert!(
        out.status.success(),
        "cdx {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_json(path: &Path, value: serde_json::Value) {
    std::fs::write(path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
}

/// A few short noise assets per category, saved under `dir`.
fn write_catalog(dir: &Path) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut catalog = serde_json::json!({
        "speech": [], "music": [], "fg_effects": [], "bg_effects": []
    });
    for (class, amp) in [
        ("speech", 0.3),
        ("music", 0.2),
        ("fg_effects", 0.25),
        ("bg_effects", 0.15),
    ] {
        for i in 0..2 {
            let wave = synth::pink_noise(&mut rng, amp, 44_100, 13_230 + i * 4410);
            let path = dir.join(format!("{class}{i}.wav"));
            save_wav(&wave, &path, BitDepth::Float32).unwrap();
            catalog[class].as_array_mut().unwrap().push(serde_json::json!({
                "path": path,
                "duration_s": wave.duration_secs(),
            }));
        }
    }
    let path = dir.join("catalog.json");
    write_json(&path, catalog);
    path
}

/// Render a small dataset with `mix` and return its manifest path.
fn mixed_manifest(dir: &Path) -> PathBuf {
    let catalog = write_catalog(dir);
    let manifest_out = dir.join("dataset/manifest.json");
    let config = dir.join("mix.json");
    write_json(
        &config,
        serde_json::json!({
            "catalog": catalog,
            "out_dir": dir.join("dataset"),
            "scenes": 4,
            "scenes_per_movie": 2,
            "recipe": { "duration_s": 2.0, "seed": 7 },
            "manifest_out": manifest_out,
        }),
    );
    run_ok(&["mix", "--config", config.to_str().unwrap()]);
    manifest_out
}

#[test]
fn mix_renders_scenes_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = mixed_manifest(dir.path());
    let manifest = DatasetManifest::load(&manifest_path).unwrap();
    assert_eq!(manifest.clips.len(), 4);
    assert_eq!(manifest.movie_ids(), ["movie000", "movie001"]);
    for clip in &manifest.clips {
        for path in [&clip.mixture, &clip.dx, &clip.fx, &clip.mx] {
            assert!(path.exists(), "{} missing", path.display());
        }
    }
    assert!(dir.path().join("dataset/scene0000/annotation.json").exists());
}

#[test]
fn eval_scores_an_oracle_submission_at_the_clamp() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = mixed_manifest(dir.path());
    let manifest = DatasetManifest::load(&manifest_path).unwrap();

    // Oracle estimates: the references themselves.
    let estimates = dir.path().join("estimates");
    for clip in &manifest.clips {
        let clip_dir = estimates.join(&clip.clip_id);
        std::fs::create_dir_all(&clip_dir).unwrap();
        for (name, src) in [("dx", &clip.dx), ("fx", &clip.fx), ("mx", &clip.mx)] {
            std::fs::copy(src, clip_dir.join(format!("{name}.wav"))).unwrap();
        }
    }

    let report_json = dir.path().join("oracle.json");
    let report_csv = dir.path().join("oracle.csv");
    let config = dir.path().join("eval.json");
    write_json(
        &config,
        serde_json::json!({
            "manifest": manifest_path,
            "estimates_root": estimates,
            "submission_id": "oracle",
            "report_json": report_json,
            "report_csv": report_csv,
        }),
    );
    let out = run_ok(&["eval", "--config", config.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("aggregate SDR"));

    let record = SubmissionRecord::load(&report_json).unwrap();
    assert_eq!(record.scores.len(), 4);
    assert!(record.flags.is_empty());
    assert_eq!(record.aggregate.unwrap().mean, 100.0);

    let csv = std::fs::read_to_string(&report_csv).unwrap();
    assert!(csv.starts_with("clip_id,movie_id,dx_db,fx_db,mx_db,mean_db"));
    assert!(csv.contains("AGGREGATE"));
}

fn fabricated_record(dir: &Path, id: &str, timestamp: u64, scores: &[(f64, f64)]) -> PathBuf {
    // One clip per (visible m0, hidden m1) pair of mean SDRs.
    let mut records = Vec::new();
    for (i, (visible, hidden)) in scores.iter().enumerate() {
        records.push(ScoreRecord {
            clip_id: format!("{id}-v{i}"),
            movie_id: "m0".into(),
            score: ClipScore::new(*visible, *visible, *visible),
        });
        records.push(ScoreRecord {
            clip_id: format!("{id}-h{i}"),
            movie_id: "m1".into(),
            score: ClipScore::new(*hidden, *hidden, *hidden),
        });
    }
    let record = SubmissionRecord {
        submission_id: id.into(),
        timestamp,
        phase: None,
        scores: records,
        flags: Vec::new(),
        aggregate: None,
    };
    let path = dir.join(format!("{id}.json"));
    record.save(&path).unwrap();
    path
}

#[test]
fn rank_orders_participants_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let strong = fabricated_record(dir.path(), "strong", 10, &[(8.0, 8.0)]);
    let weak = fabricated_record(dir.path(), "weak", 5, &[(2.0, 2.0)]);

    let out_csv = dir.path().join("board.csv");
    let out_json = dir.path().join("board.json");
    let config = dir.path().join("rank.json");
    write_json(
        &config,
        serde_json::json!({
            "submissions": [
                { "participant": "alice", "records": [weak] },
                { "participant": "bob", "records": [strong] },
            ],
            "out_csv": out_csv,
            "out_json": out_json,
        }),
    );
    let out = run_ok(&["rank", "--config", config.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("1. bob"), "stdout: {stdout}");

    let csv = std::fs::read_to_string(&out_csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "rank,participant,mean_db,dx_db,fx_db,mx_db,submission_id"
    );
    assert!(lines.next().unwrap().starts_with("1,bob,8.000000"));
    assert!(lines.next().unwrap().starts_with("2,alice,2.000000"));
    assert!(out_json.exists());
}

#[test]
fn overfit_reports_a_negative_slope_for_a_diverging_history() {
    let dir = tempfile::tempdir().unwrap();
    let history = [
        fabricated_record(dir.path(), "s1", 1, &[(5.0, 5.0)]),
        fabricated_record(dir.path(), "s2", 2, &[(5.0, 4.0)]),
        fabricated_record(dir.path(), "s3", 3, &[(5.0, 3.0)]),
    ];
    let out = dir.path().join("trace.json");
    let config = dir.path().join("overfit.json");
    write_json(
        &config,
        serde_json::json!({
            "history": history,
            "visible_movies": ["m0"],
            "hidden_movies": ["m1"],
            "out": out,
        }),
    );
    let run = run_ok(&["overfit", "--config", config.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&run.stdout).contains("slope: -1.0000"));

    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(trace["points"].as_array().unwrap().len(), 3);
    let slope = trace["slope_db_per_submission"].as_f64().unwrap();
    assert!((slope + 1.0).abs() < 1e-12);
}

#[test]
fn stats_measures_every_class() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = mixed_manifest(dir.path());
    let out = dir.path().join("stats.json");
    let config = dir.path().join("stats.json.config");
    write_json(
        &config,
        serde_json::json!({ "manifest": manifest_path, "out": out }),
    );
    run_ok(&["stats", "--config", config.to_str().unwrap()]);

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    for class in ["mixture", "dx", "fx", "mx"] {
        assert_eq!(report[class]["clips"], 4, "class {class}");
        assert!(report[class]["loudness"]["mean"].is_f64());
    }
}

#[test]
fn adapt_applies_a_loudness_plan() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = mixed_manifest(dir.path());
    let plan = dir.path().join("plan.json");
    write_json(&plan, serde_json::json!({ "dx": { "loudness_offset_lu": -4.0 } }));

    let out_dir = dir.path().join("adapted");
    let config = dir.path().join("adapt.json");
    write_json(
        &config,
        serde_json::json!({
            "manifest": manifest_path,
            "out_dir": out_dir,
            "plan": plan,
            "report": dir.path().join("adapt-report.json"),
        }),
    );
    run_ok(&["adapt", "--config", config.to_str().unwrap()]);

    let adapted = DatasetManifest::load(out_dir.join("manifest.json")).unwrap();
    assert_eq!(adapted.clips.len(), 4);
    for clip in &adapted.clips {
        assert!(clip.mixture.starts_with(&out_dir));
        assert!(clip.mixture.exists());
    }
    assert!(dir.path().join("adapt-report.json").exists());
}

#[test]
fn curate_reports_accepted_windows() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = mixed_manifest(dir.path());
    let out = dir.path().join("segments.json");
    let config = dir.path().join("curate.json");
    write_json(
        &config,
        serde_json::json!({
            "manifest": manifest_path,
            "window_s": 1.0,
            "hop_s": 0.5,
            "thresholds": { "tau_dx": 1e-6, "tau_fx": 1e-6, "tau_mx": 1e-6 },
            "out": out,
        }),
    );
    let run = run_ok(&["curate", "--config", config.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&run.stdout).contains("4 of 4 clips"));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report.as_array().unwrap().len(), 4);
    assert!(!report[0]["segments"].as_array().unwrap().is_empty());
}

#[test]
fn config_path_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = mixed_manifest(dir.path());
    let config = dir.path().join("curate.json");
    write_json(&config, serde_json::json!({ "manifest": manifest_path }));

    let out = cdx()
        .arg("curate")
        .env("CDX_CURATE_CONFIG", &config)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exit_codes_follow_the_contract() {
    // 0: help and version.
    assert_eq!(exit_code(&cdx().arg("--help").output().unwrap()), 0);
    assert_eq!(exit_code(&cdx().arg("--version").output().unwrap()), 0);

    // 1: bad flags, unknown subcommands, unreadable or invalid configs.
    assert_eq!(exit_code(&cdx().arg("frobnicate").output().unwrap()), 1);
    assert_eq!(
        exit_code(&cdx().args(["eval", "--config", "/nonexistent.json"]).output().unwrap()),
        1
    );
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"not_a_field\": 1}").unwrap();
    assert_eq!(
        exit_code(&cdx().args(["eval", "--config", bad.to_str().unwrap()]).output().unwrap()),
        1
    );

    // 2: well-formed config pointing at missing data.
    let config = dir.path().join("eval.json");
    write_json(
        &config,
        serde_json::json!({
            "manifest": dir.path().join("missing-manifest.json"),
            "estimates_root": dir.path(),
            "submission_id": "x",
        }),
    );
    assert_eq!(
        exit_code(&cdx().args(["eval", "--config", config.to_str().unwrap()]).output().unwrap()),
        2
    );
}
