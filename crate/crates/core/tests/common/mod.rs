#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use face_consistency::pipeline::RunOptions;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn toy_manifest() -> PathBuf {
    fixtures().join("toy/toy.toml")
}

pub fn stub_manifest() -> PathBuf {
    fixtures().join("toy/stub.toml")
}

/// Options writing results and cache under `out`.
pub fn opts(out: &Path) -> RunOptions {
    RunOptions {
        out_dir: Some(out.to_path_buf()),
        cache_dir: Some(out.join("cache")),
        ..RunOptions::default()
    }
}

pub fn copy_dir(src: &Path, dst: &Path) {
    std::fs::create_dir_all(dst).unwrap();
    for entry in std::fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        let target = dst.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), &target).unwrap();
        }
    }
}

/// Every file under `dir` except the cache, keyed by relative path.
pub fn outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            out.insert(
                entry.file_name().to_string_lossy().into_owned(),
                std::fs::read(entry.path()).unwrap(),
            );
        }
    }
    out
}

/// Writes `n` distinct 32x32 frames into a frame folder.
pub fn write_frames(dir: &Path, n: usize, seed: u8) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let img = image::RgbImage::from_fn(32, 32, |x, y| {
            let v = (x * 7 + y * 3 + i as u32 * 11 + seed as u32 * 29) % 200 + 30;
            image::Rgb([v as u8, (v / 2) as u8, 255 - v as u8])
        });
        img.save(dir.join(format!("{i}.png"))).unwrap();
    }
}

/// TOML array of quoted absolute paths.
pub fn toml_paths(paths: &[PathBuf]) -> String {
    let quoted: Vec<String> = paths.iter().map(|p| format!("{:?}", p.to_string_lossy())).collect();
    format!("[{}]", quoted.join(", "))
}

/// Cosine distance written independently of the library.
pub fn oracle_cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for k in 0..a.len() {
        dot += a[k] as f64 * b[k] as f64;
        na += a[k] as f64 * a[k] as f64;
        nb += b[k] as f64 * b[k] as f64;
    }
    (1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0)
}

pub fn oracle_euclidean(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for k in 0..a.len() {
        let d = a[k] as f64 - b[k] as f64;
        s += d * d;
    }
    s.sqrt()
}

pub mod published {
    use std::collections::BTreeSet;

    use face_consistency::consistency::{ConsistencyScore, MetricKind, ScoreMode, SourceAggregate};
    use face_consistency::report::{build_report, GridCell, ReportLayout, RunMetadata};
    use face_consistency::{BenchmarkReport, SourceKind};
    use serde::Deserialize;

    #[derive(Deserialize)]
    struct File {
        models: Vec<String>,
        tables: Vec<Table>,
    }

    #[derive(Deserialize)]
    struct Table {
        mode: String,
        rows: Vec<Row>,
    }

    #[derive(Deserialize)]
    struct Row {
        source: String,
        kind: String,
        cells: Vec<String>,
    }

    /// One published table: printed cells plus the report rebuilt from their values.
    pub struct Case {
        pub mode: ScoreMode,
        /// (source, model, printed value, printed bold)
        pub printed: Vec<(String, String, String, bool)>,
        pub report: BenchmarkReport,
    }

    impl Case {
        pub fn printed_bold(&self) -> BTreeSet<(String, String)> {
            self.printed
                .iter()
                .filter(|c| c.3)
                .map(|c| (c.0.clone(), c.1.clone()))
                .collect()
        }
    }

    pub fn load() -> Vec<Case> {
        let text = std::fs::read_to_string(super::fixtures().join("published_tables.json")).unwrap();
        let file: File = serde_json::from_str(&text).unwrap();
        file.tables
            .into_iter()
            .map(|t| {
                let mode = if t.mode == "mode1" {
                    ScoreMode::Mode1
                } else {
                    ScoreMode::Mode2
                };
                let layout = ReportLayout {
                    sources: t
                        .rows
                        .iter()
                        .map(|r| {
                            let kind = if r.kind == "real" {
                                SourceKind::Real
                            } else {
                                SourceKind::Generated
                            };
                            (r.source.clone(), kind)
                        })
                        .collect(),
                    models: file.models.clone(),
                };
                let mut printed = Vec::new();
                let mut cells = Vec::new();
                for r in &t.rows {
                    for (model, raw) in file.models.iter().zip(&r.cells) {
                        let bold = raw.starts_with("**");
                        let value = raw.trim_matches('*').to_string();
                        let mean: f64 = value.parse().unwrap();
                        printed.push((r.source.clone(), model.clone(), value, bold));
                        cells.push(GridCell::Scored(SourceAggregate {
                            source_name: r.source.clone(),
                            model_id: model.clone(),
                            metric: MetricKind::Cosine,
                            mode,
                            mean_of_video_means: mean,
                            std_of_video_means: 0.0,
                            per_video: vec![ConsistencyScore {
                                video_id: format!("{}/clip.mp4", r.source),
                                model_id: model.clone(),
                                metric: MetricKind::Cosine,
                                mode,
                                mean,
                                std: 0.0,
                                n_comparisons: 1,
                                reference_index: None,
                            }],
                            n_unscorable: 0,
                        }));
                    }
                }
                let report = build_report(mode, MetricKind::Cosine, &layout, &cells, RunMetadata::default()).unwrap();
                Case { mode, printed, report }
            })
            .collect()
    }
}
