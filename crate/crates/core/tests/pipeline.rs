mod common;

use std::path::Path;

use common::*;
use face_consistency::consistency::{MetricKind, ScoreMode, VideoScore};
use face_consistency::manifest::load_manifest;
use face_consistency::pipeline::{cmd_run, cmd_score, PipelineError, Plan, RunOptions, ScoreFile, SCORE_FILE};
use face_consistency::report::TableFormat;
use face_consistency::ReferenceChoice;

fn plan(manifest: &Path, opts: &RunOptions) -> Plan {
    Plan::new(load_manifest(manifest).unwrap(), opts).unwrap()
}

fn scores_of(file: &ScoreFile, model: &str, mode: ScoreMode, metric: MetricKind) -> Vec<(String, f64)> {
    file.scored()
        .filter(|s| s.model_id == model && s.mode == mode && s.metric == metric)
        .map(|s| (s.video_id.clone(), s.mean))
        .collect()
}

#[test]
fn toy_run_writes_every_table_and_plot_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = opts(dir.path());
    o.metrics = Some(MetricKind::ALL.to_vec());
    let outcome = cmd_run(&plan(&toy_manifest(), &o)).unwrap();
    assert_eq!(outcome.exit_code(), 0);
    for mode in ["mode1", "mode2"] {
        for metric in ["cosine", "euclidean", "euclidean_l2"] {
            for ext in ["txt", "md", "csv", "json"] {
                assert!(dir.path().join(format!("table_{mode}_{metric}.{ext}")).is_file());
            }
        }
    }
    for metric in ["cosine", "euclidean", "euclidean_l2"] {
        let csv = std::fs::read_to_string(dir.path().join(format!("plot_data_{metric}.csv"))).unwrap();
        // header + 2 modes x 3 sources x 1 model
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 7);
    }
    assert!(dir.path().join(SCORE_FILE).is_file());
    assert_eq!(outcome.summary.videos_processed, 6);
    assert_eq!(outcome.summary.frames_embedded, 6 * 16);
}

#[test]
fn single_identity_scores_below_identity_switches() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = opts(dir.path());
    o.metrics = Some(MetricKind::ALL.to_vec());
    let (_, file) = cmd_score(&plan(&toy_manifest(), &o)).unwrap();
    for mode in [ScoreMode::Mode1, ScoreMode::Mode2] {
        for metric in MetricKind::ALL {
            let scores = scores_of(&file, "toy", mode, metric);
            let worst_steady = scores
                .iter()
                .filter(|(v, _)| !v.starts_with("switching/"))
                .map(|s| s.1)
                .fold(f64::MIN, f64::max);
            let best_switch = scores
                .iter()
                .filter(|(v, _)| v.starts_with("switching/"))
                .map(|s| s.1)
                .fold(f64::MAX, f64::min);
            assert!(
                worst_steady < best_switch,
                "{mode} {metric}: {worst_steady} vs {best_switch}"
            );
        }
    }
}

#[test]
fn worker_count_does_not_change_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut oa = opts(a.path());
    oa.jobs = Some(1);
    let mut ob = opts(b.path());
    ob.jobs = Some(4);
    cmd_run(&plan(&toy_manifest(), &oa)).unwrap();
    cmd_run(&plan(&toy_manifest(), &ob)).unwrap();
    assert_eq!(outputs(a.path()), outputs(b.path()));
}

#[test]
fn second_run_is_served_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let o = opts(dir.path());
    let first = cmd_run(&plan(&toy_manifest(), &o)).unwrap();
    assert_eq!(first.summary.cache_misses, 6);
    assert!(first.summary.inference_calls > 0);
    let before = outputs(dir.path());

    let second = cmd_run(&plan(&toy_manifest(), &o)).unwrap();
    assert_eq!(second.summary.cache_hits, 6);
    assert_eq!(second.summary.cache_misses, 0);
    assert_eq!(second.summary.inference_calls, 0);
    assert_eq!(second.summary.frames_decoded, 0);
    assert_eq!(before, outputs(dir.path()));
}

#[test]
fn corrupt_cache_entry_is_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let o = opts(dir.path());
    cmd_run(&plan(&toy_manifest(), &o)).unwrap();
    let before = outputs(dir.path());

    let entry = std::fs::read_dir(dir.path().join("cache"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("switching"))
        .unwrap();
    let mut bytes = std::fs::read(&entry).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    std::fs::write(&entry, bytes).unwrap();

    let again = cmd_run(&plan(&toy_manifest(), &o)).unwrap();
    assert_eq!(again.exit_code(), 0);
    assert_eq!(again.summary.cache_corrupt, 1);
    assert_eq!(again.summary.cache_hits, 5);
    assert!(again.summary.warnings.iter().any(|w| w.contains("cache")));
    assert_eq!(before, outputs(dir.path()));
}

#[test]
fn unreadable_video_fails_alone() {
    let work = tempfile::tempdir().unwrap();
    copy_dir(&fixtures().join("toy"), work.path());
    let broken = work.path().join("videos/switching/broken");
    std::fs::create_dir_all(&broken).unwrap();
    std::fs::write(broken.join("0.png"), b"not a png").unwrap();
    let manifest = work.path().join("toy.toml");
    let text = std::fs::read_to_string(&manifest).unwrap().replace(
        "\"videos/switching/switch_cab\"]",
        "\"videos/switching/switch_cab\", \"videos/switching/broken\"]",
    );
    std::fs::write(&manifest, text).unwrap();

    let out = work.path().join("out");
    let outcome = cmd_run(&plan(&manifest, &opts(&out))).unwrap();
    assert_eq!(outcome.exit_code(), 2);
    assert_eq!(outcome.summary.videos_failed, 1);
    assert_eq!(outcome.summary.videos_processed, 6);
    assert_eq!(outcome.summary.failures[0].video_id, "switching/broken");
    assert!(out.join("table_mode1_cosine.md").is_file());

    let again = cmd_run(&plan(&manifest, &opts(&out))).unwrap();
    assert_eq!(again.summary.cache_hits, 6);
    assert_eq!(again.exit_code(), 2);
}

#[test]
fn rejected_frames_shrink_the_comparison_set() {
    let dir = tempfile::tempdir().unwrap();
    let (outcome, file) = cmd_score(&plan(&stub_manifest(), &opts(dir.path()))).unwrap();
    assert_eq!(outcome.exit_code(), 0);
    let mode1 = |id: &str| {
        file.scored()
            .find(|s| s.video_id == id && s.mode == ScoreMode::Mode1)
            .map(|s| s.n_comparisons)
    };
    // 16 frames; steady_a rejects 3, switch_cab rejects the 8 even frames
    assert_eq!(mode1("real/steady_a"), Some(12));
    assert_eq!(mode1("real/steady_b"), Some(15));
    assert_eq!(mode1("switching/switch_cab"), Some(7));
    assert_eq!(mode1("steady/jitter_a"), None);
    let unscorable: Vec<_> = file
        .records
        .iter()
        .filter_map(|r| match &r.score {
            VideoScore::Unscorable(u) => Some((u.video_id.as_str(), u.valid_frames)),
            _ => None,
        })
        .collect();
    assert_eq!(unscorable, vec![("steady/jitter_a", 1), ("steady/jitter_a", 1)]);
    assert!(outcome.summary.warnings.iter().any(|w| w.contains("steady/jitter_a")));

    let reports = face_consistency::pipeline::build_reports(&load_manifest(&stub_manifest()).unwrap(), &file).unwrap();
    let cell = reports[0].cell("steady", "toy").unwrap();
    assert_eq!(cell.n_videos, 1);
    assert_eq!(cell.n_unscorable, 1);
    assert_eq!(
        outcome.summary.frames_skipped + outcome.summary.frames_embedded + outcome.summary.frames_dropped,
        outcome.summary.frames_examined
    );
}

#[test]
fn seed_only_changes_mode2() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ob = opts(b.path());
    ob.seed = Some(99);
    ob.num_pairs = Some(5);
    let mut oa = opts(a.path());
    oa.num_pairs = Some(5);
    let (_, fa) = cmd_score(&plan(&toy_manifest(), &oa)).unwrap();
    let (_, fb) = cmd_score(&plan(&toy_manifest(), &ob)).unwrap();
    let m1 = |f: &ScoreFile| scores_of(f, "toy", ScoreMode::Mode1, MetricKind::Cosine);
    let m2 = |f: &ScoreFile| scores_of(f, "toy", ScoreMode::Mode2, MetricKind::Cosine);
    assert_eq!(m1(&fa), m1(&fb));
    assert_ne!(m2(&fa), m2(&fb));
}

#[test]
fn default_pair_count_is_200() {
    let work = tempfile::tempdir().unwrap();
    copy_dir(&fixtures().join("toy"), work.path());
    let manifest = work.path().join("toy.toml");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let stripped: String = text
        .lines()
        .filter(|l| !l.starts_with("[mode2]") && !l.starts_with("num_pairs"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&manifest, stripped).unwrap();
    let (_, file) = cmd_score(&plan(&manifest, &opts(&work.path().join("out")))).unwrap();
    assert_eq!(file.metadata.num_pairs, 200);
    for s in file.scored().filter(|s| s.mode == ScoreMode::Mode2) {
        assert_eq!(s.n_comparisons, 200);
    }
}

#[test]
fn stride_subsamples_frames() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = opts(dir.path());
    o.stride = 3;
    let (outcome, file) = cmd_score(&plan(&toy_manifest(), &o)).unwrap();
    // frames 0, 3, 6, 9, 12, 15
    assert_eq!(outcome.summary.frames_embedded, 6 * 6);
    for s in file.scored().filter(|s| s.mode == ScoreMode::Mode1) {
        assert_eq!(s.n_comparisons, 5);
    }
}

#[test]
fn reference_choices() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = opts(dir.path());
    o.reference = Some(ReferenceChoice::Index(4));
    let (_, file) = cmd_score(&plan(&toy_manifest(), &o)).unwrap();
    assert!(file
        .scored()
        .filter(|s| s.mode == ScoreMode::Mode1)
        .all(|s| s.reference_index == Some(4)));

    // index past the valid frames of switch_cab under the stub detector
    let mut o = opts(dir.path());
    o.reference = Some(ReferenceChoice::Index(10));
    o.modes = vec![ScoreMode::Mode1];
    let (outcome, _) = cmd_score(&plan(&stub_manifest(), &o)).unwrap();
    assert_eq!(outcome.exit_code(), 2);
    assert_eq!(outcome.summary.failures.len(), 1);
    assert!(outcome.summary.failures[0].message.contains("out of range"));
}

#[test]
fn missing_grid_cell_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut file) = cmd_score(&plan(&toy_manifest(), &opts(dir.path()))).unwrap();
    file.records.retain(|r| r.source != "steady");
    let err = face_consistency::pipeline::build_reports(&load_manifest(&toy_manifest()).unwrap(), &file).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("steady") && msg.contains("toy"), "{msg}");
}

#[test]
fn report_only_formats_requested() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = opts(dir.path());
    o.formats = vec![TableFormat::Markdown];
    o.modes = vec![ScoreMode::Mode1];
    let outcome = cmd_run(&plan(&toy_manifest(), &o)).unwrap();
    let names: Vec<String> = outcome
        .written
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, vec![SCORE_FILE.to_string(), "table_mode1_cosine.md".to_string()]);
}

#[test]
fn bad_overrides_are_rejected() {
    let m = load_manifest(&toy_manifest()).unwrap();
    let o = RunOptions {
        stride: 0,
        ..RunOptions::default()
    };
    assert!(matches!(Plan::new(m.clone(), &o), Err(PipelineError::Option(_))));
    let o = RunOptions {
        models: Some(vec!["nonexistent".into()]),
        ..RunOptions::default()
    };
    assert!(Plan::new(m, &o).is_err());
}
