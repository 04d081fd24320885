//! Stage drivers behind the command-line tool: extract (decode, detect,
//! align, embed, cache), score, and report.
//!
//! Work is split per video; each task decodes its video once and embeds
//! every requested model that is not already cached. Results are collected
//! in manifest order, so the number of workers never changes any output.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;
use thiserror::Error;

use crate::consistency::{
    aggregate_source, score_mode1, score_mode2, select_reference, MetricKind, ScoreError, ScoreMode, UnscorableVideo,
    VideoScore,
};
use crate::embed::cache::{cache_load, cache_store, CacheKey, CacheLookup, CACHE_FORMAT_VERSION};
use crate::embed::{embed_crop, new_embedder, EmbedError, Embedder, EmbeddingSet, ModelRegistry, ModelSpec};
use crate::facegate::{
    align_and_crop, detect_primary_face, DetectError, DetectorConfig, DetectorFactory, DetectorKind,
};
use crate::frameio::{content_hash, decode_frames, normalize_resolution, DecodeError};
use crate::manifest::{validate_against_registry, Manifest, ManifestError, ReferenceChoice, SourceKind, VideoEntry};
use crate::parallel::Executor;
use crate::report::{
    build_report, emit_plot_data, BenchmarkReport, GridCell, ReportError, ReportLayout, RunMetadata, TableFormat,
};
use crate::TOOLKIT_VERSION;

pub const SCORE_FILE: &str = "scores.json";
pub const SCORE_FORMAT_VERSION: u32 = 1;
pub const CACHE_DIR_ENV: &str = "FCB_CACHE_DIR";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Detector(#[from] DetectError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("{}: {message}", path.display())]
    ScoreFile { path: PathBuf, message: String },
    #[error("invalid option: {0}")]
    Option(String),
    #[error("every video failed")]
    NothingSucceeded,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Command-line overrides; `None` keeps the manifest's value.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub models: Option<Vec<String>>,
    pub metrics: Option<Vec<MetricKind>>,
    pub modes: Vec<ScoreMode>,
    pub num_pairs: Option<usize>,
    pub seed: Option<u64>,
    pub reference: Option<ReferenceChoice>,
    pub max_dim: Option<u32>,
    pub stride: usize,
    pub jobs: Option<usize>,
    /// Defaults to `$FCB_CACHE_DIR`, then `<output_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub formats: Vec<TableFormat>,
    pub include_self: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            models: None,
            metrics: None,
            modes: vec![ScoreMode::Mode1, ScoreMode::Mode2],
            num_pairs: None,
            seed: None,
            reference: None,
            max_dim: None,
            stride: 1,
            jobs: None,
            cache_dir: None,
            out_dir: None,
            formats: TableFormat::ALL.to_vec(),
            include_self: false,
        }
    }
}

/// A manifest with overrides applied and models resolved.
pub struct Plan {
    pub manifest: Manifest,
    pub registry: ModelRegistry,
    pub specs: Vec<ModelSpec>,
    pub metrics: Vec<MetricKind>,
    pub modes: Vec<ScoreMode>,
    pub stride: usize,
    pub include_self: bool,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    pub formats: Vec<TableFormat>,
    pub executor: Executor,
}

impl Plan {
    pub fn new(mut manifest: Manifest, opts: &RunOptions) -> Result<Plan, PipelineError> {
        if let Some(models) = &opts.models {
            manifest.models = models.clone();
        }
        if let Some(n) = opts.num_pairs {
            if n == 0 {
                return Err(PipelineError::Option("--pairs must be at least 1".into()));
            }
            manifest.mode2.num_pairs = n;
        }
        if let Some(s) = opts.seed {
            manifest.seed = s;
        }
        if let Some(r) = opts.reference {
            manifest.mode1.reference = r;
        }
        if let Some(d) = opts.max_dim {
            if d == 0 {
                return Err(PipelineError::Option("--max-dim must be at least 1".into()));
            }
            manifest.max_dim = d;
        }
        if opts.stride == 0 {
            return Err(PipelineError::Option("--stride must be at least 1".into()));
        }
        if opts.modes.is_empty() {
            return Err(PipelineError::Option("no mode selected".into()));
        }
        let registry = manifest.load_registry().map_err(ManifestError::from)?;
        let specs = validate_against_registry(&manifest, &registry)?;
        let metrics = opts.metrics.clone().unwrap_or_else(|| vec![manifest.metric]);
        let out_dir = opts.out_dir.clone().unwrap_or_else(|| manifest.output_dir.clone());
        let cache_dir = opts
            .cache_dir
            .clone()
            .or_else(|| {
                std::env::var_os(CACHE_DIR_ENV)
                    .filter(|v| !v.is_empty())
                    .map(PathBuf::from)
            })
            .unwrap_or_else(|| out_dir.join("cache"));
        let mut modes = opts.modes.clone();
        modes.sort();
        modes.dedup();
        Ok(Plan {
            manifest,
            registry,
            specs,
            metrics,
            modes,
            stride: opts.stride,
            include_self: opts.include_self,
            cache_dir,
            out_dir,
            formats: opts.formats.clone(),
            executor: Executor::parallel(opts.jobs),
        })
    }

    pub fn metadata(&self) -> RunMetadata {
        RunMetadata {
            seed: self.manifest.seed,
            num_pairs: self.manifest.mode2.num_pairs,
            max_dim: self.manifest.max_dim,
            stride: self.stride,
            reference: self.manifest.mode1.reference.to_string(),
            include_self: self.include_self,
            registry_hash: self.registry.hash.clone(),
            toolkit_version: TOOLKIT_VERSION.to_string(),
        }
    }

    /// Bbox margin used for crops; full-frame "detections" are not padded.
    fn crop_margin(&self) -> f32 {
        match self.manifest.detector.kind {
            DetectorKind::FullFrame => 0.0,
            _ => self.manifest.detector.margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoFailure {
    pub video_id: String,
    pub message: String,
}

/// Counters for one invocation. Frame counts are summed over (video, model)
/// embedding sets, so `skipped + embedded + dropped = examined`;
/// `frames_decoded` counts frames actually decoded (zero on a fully cached
/// run).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub videos_processed: usize,
    pub videos_failed: usize,
    pub frames_decoded: u64,
    pub frames_examined: u64,
    pub frames_skipped: u64,
    pub frames_embedded: u64,
    pub frames_dropped: u64,
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub cache_corrupt: usize,
    pub inference_calls: u64,
    pub stage_seconds: Vec<(String, f64)>,
    pub warnings: Vec<String>,
    pub failures: Vec<VideoFailure>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }

    pub fn log(&self) {
        log::info!(
            "videos: {} processed, {} failed; frames: {} decoded, {} examined, {} embedded, {} skipped (no face), {} dropped",
            self.videos_processed,
            self.videos_failed,
            self.frames_decoded,
            self.frames_examined,
            self.frames_embedded,
            self.frames_skipped,
            self.frames_dropped
        );
        log::info!(
            "cache: {} hits, {} misses, {} corrupt; {} inference calls",
            self.cache_hits,
            self.cache_misses,
            self.cache_corrupt,
            self.inference_calls
        );
        for (stage, s) in &self.stage_seconds {
            log::info!("{stage}: {s:.2} s");
        }
        for f in &self.failures {
            log::error!("{}: {}", f.video_id, f.message);
        }
    }
}

/// Embeddings of one video, one set per plan model.
#[derive(Debug, Clone)]
pub struct VideoEmbeddings {
    pub entry: VideoEntry,
    pub sets: Vec<EmbeddingSet>,
}

#[derive(Default)]
struct TaskStats {
    hits: usize,
    misses: usize,
    corrupt: usize,
    decoded: u64,
    inference_calls: u64,
    warnings: Vec<String>,
}

fn file_digest(path: &Path) -> Result<String, std::io::Error> {
    let mut h = Sha256::new();
    let mut f = std::fs::File::open(path)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        match f.read(&mut buf)? {
            0 => return Ok(hex::encode(h.finalize())),
            n => h.update(&buf[..n]),
        }
    }
}

/// Hash of everything besides the video bytes that determines an embedding set.
fn param_hash(plan: &Plan, spec: &ModelSpec, detector: &serde_json::Value, weights: &Option<String>) -> [u8; 32] {
    let mut spec_json = serde_json::to_value(spec).expect("spec serializes");
    spec_json["weights"] = serde_json::json!(weights);
    let params = serde_json::json!({
        "cache_format": CACHE_FORMAT_VERSION,
        "toolkit": TOOLKIT_VERSION,
        "max_dim": plan.manifest.max_dim,
        "stride": plan.stride,
        "detector": detector,
        "margin": plan.crop_margin(),
        "model": spec_json,
        "template": plan.registry.template,
    });
    Sha256::digest(params.to_string().as_bytes()).into()
}

fn detector_fingerprint(config: &DetectorConfig, video: &Path) -> Result<serde_json::Value, String> {
    let digest = |p: &Path| file_digest(p).map_err(|e| format!("{}: {e}", p.display()));
    Ok(match &config.kind {
        DetectorKind::FullFrame => serde_json::json!({ "kind": "full_frame" }),
        DetectorKind::Stub { script } => {
            let file = DetectorFactory::stub_script_for(script, video);
            serde_json::json!({ "kind": "stub", "script": digest(&file)? })
        }
        DetectorKind::Neural {
            model,
            threshold,
            input_size,
        } => serde_json::json!({
            "kind": "neural",
            "model": digest(model)?,
            "threshold": threshold,
            "input_size": input_size,
        }),
    })
}

/// Embedders loaded once per run and cloned into tasks.
struct EmbedderBank {
    prototypes: Vec<Mutex<Box<dyn Embedder>>>,
    weights: Vec<Option<String>>,
}

impl EmbedderBank {
    fn load(specs: &[ModelSpec]) -> Result<Self, PipelineError> {
        let mut prototypes = Vec::new();
        let mut weights = Vec::new();
        for s in specs {
            prototypes.push(Mutex::new(new_embedder(s)?));
            weights.push(match &s.weights {
                Some(p) => Some(file_digest(p).map_err(io_err(p))?),
                None => None,
            });
        }
        Ok(EmbedderBank { prototypes, weights })
    }

    fn instance(&self, i: usize) -> Result<Box<dyn Embedder>, EmbedError> {
        let proto = self.prototypes[i].lock().unwrap_or_else(|e| e.into_inner());
        match proto.try_clone() {
            Some(e) => Ok(e),
            None => new_embedder(proto.spec()),
        }
    }
}

// Embeddings under construction for one model.
struct Accumulator {
    embedder: Box<dyn Embedder>,
    embeddings: Vec<crate::embed::Embedding>,
    dropped: u64,
}

fn extract_video(
    plan: &Plan,
    bank: &EmbedderBank,
    factory: &DetectorFactory,
    entry: &VideoEntry,
) -> (Result<Vec<EmbeddingSet>, String>, TaskStats) {
    let mut stats = TaskStats::default();
    let result = extract_video_inner(plan, bank, factory, entry, &mut stats);
    (result, stats)
}

fn extract_video_inner(
    plan: &Plan,
    bank: &EmbedderBank,
    factory: &DetectorFactory,
    entry: &VideoEntry,
    stats: &mut TaskStats,
) -> Result<Vec<EmbeddingSet>, String> {
    let hash = content_hash(&entry.path).map_err(|e| e.to_string())?;
    let detector_fp = detector_fingerprint(&plan.manifest.detector, &entry.path)?;
    let keys: Vec<CacheKey> = plan
        .specs
        .iter()
        .zip(&bank.weights)
        .map(|(spec, w)| CacheKey {
            video_id: entry.video_id.clone(),
            content_hash: hash,
            model_id: spec.id.clone(),
            param_hash: param_hash(plan, spec, &detector_fp, w),
        })
        .collect();

    let mut sets: Vec<Option<EmbeddingSet>> = Vec::new();
    for key in &keys {
        match cache_load(key, &plan.cache_dir) {
            CacheLookup::Hit(set) => {
                stats.hits += 1;
                sets.push(Some(set));
            }
            CacheLookup::Miss => {
                stats.misses += 1;
                sets.push(None);
            }
            CacheLookup::Corrupt { path, reason } => {
                stats.corrupt += 1;
                stats.misses += 1;
                let w = format!(
                    "{}: cache entry {} unusable ({reason}); recomputing",
                    entry.video_id,
                    path.display()
                );
                log::warn!("{w}");
                stats.warnings.push(w);
                sets.push(None);
            }
        }
    }
    let missing: Vec<usize> = (0..sets.len()).filter(|&i| sets[i].is_none()).collect();
    if missing.is_empty() {
        log::debug!("{}: all models cached", entry.video_id);
        return Ok(sets.into_iter().map(|s| s.expect("hit")).collect());
    }

    log::info!("{}: extracting {} model(s)", entry.video_id, missing.len());
    let mut detector = factory.for_video(&entry.path).map_err(|e| e.to_string())?;
    let mut accs = missing
        .iter()
        .map(|&i| {
            Ok(Accumulator {
                embedder: bank.instance(i)?,
                embeddings: Vec::new(),
                dropped: 0,
            })
        })
        .collect::<Result<Vec<_>, EmbedError>>()
        .map_err(|e| e.to_string())?;
    let frames = decode_frames(&entry.path, plan.stride).map_err(|e| e.to_string())?;
    let (mut examined, mut skipped) = (0u64, 0u64);
    let margin = plan.crop_margin();
    for frame in frames {
        let frame = normalize_resolution(frame.map_err(|e: DecodeError| e.to_string())?, plan.manifest.max_dim);
        stats.decoded += 1;
        examined += 1;
        let Some(obs) = detect_primary_face(&frame, detector.as_mut()).map_err(|e| e.to_string())? else {
            skipped += 1;
            continue;
        };
        for acc in accs.iter_mut() {
            let spec = acc.embedder.spec();
            let aligned = align_and_crop(&frame, obs.clone(), spec.input_size, &plan.registry.template, margin);
            let crop = aligned.crop.as_ref().expect("crop filled");
            stats.inference_calls += 1;
            match embed_crop(crop, acc.embedder.as_mut(), frame.frame_index) {
                Ok(e) => acc.embeddings.push(e),
                Err(e) if e.is_droppable() => {
                    log::debug!("{}: frame {} dropped: {e}", entry.video_id, frame.frame_index);
                    acc.dropped += 1;
                }
                Err(e) => return Err(format!("frame {}: {e}", frame.frame_index)),
            }
        }
    }
    for (acc, &i) in accs.into_iter().zip(&missing) {
        let spec = &plan.specs[i];
        if acc.dropped > 0 {
            let w = format!(
                "{}: {} frame(s) dropped for model {} (zero-norm or non-finite embedding)",
                entry.video_id, acc.dropped, spec.id
            );
            log::warn!("{w}");
            stats.warnings.push(w);
        }
        let set = EmbeddingSet {
            video_id: entry.video_id.clone(),
            model_id: spec.id.clone(),
            embeddings: acc.embeddings,
            total_frames: examined,
            skipped_frames: skipped,
            dropped_frames: acc.dropped,
        };
        if let Err(e) = cache_store(&set, &keys[i], spec.embedding_dim, &plan.cache_dir) {
            let w = format!("{}: could not write cache entry for {}: {e}", entry.video_id, spec.id);
            log::warn!("{w}");
            stats.warnings.push(w);
        }
        sets[i] = Some(set);
    }
    Ok(sets.into_iter().map(|s| s.expect("filled")).collect())
}

/// Decodes, detects and embeds every manifest video, using and filling the
/// cache. Failed videos are recorded in `summary` and left out.
pub fn extract(plan: &Plan, summary: &mut RunSummary) -> Result<Vec<VideoEmbeddings>, PipelineError> {
    let start = Instant::now();
    let bank = EmbedderBank::load(&plan.specs)?;
    let factory = DetectorFactory::new(&plan.manifest.detector)?;
    let entries = plan.manifest.videos();
    log::info!(
        "extracting {} video(s) x {} model(s) with {} worker(s)",
        entries.len(),
        plan.specs.len(),
        plan.executor.workers()
    );
    let results = plan
        .executor
        .map_ref(&entries, |entry| extract_video(plan, &bank, &factory, entry));
    let mut out = Vec::new();
    for (entry, (result, stats)) in entries.into_iter().zip(results) {
        summary.cache_hits += stats.hits;
        summary.cache_misses += stats.misses;
        summary.cache_corrupt += stats.corrupt;
        summary.frames_decoded += stats.decoded;
        summary.inference_calls += stats.inference_calls;
        summary.warnings.extend(stats.warnings);
        match result {
            Ok(sets) => {
                summary.videos_processed += 1;
                for s in &sets {
                    summary.frames_examined += s.total_frames;
                    summary.frames_skipped += s.skipped_frames;
                    summary.frames_dropped += s.dropped_frames;
                    summary.frames_embedded += s.embeddings.len() as u64;
                }
                out.push(VideoEmbeddings { entry, sets });
            }
            Err(message) => {
                summary.videos_failed += 1;
                summary.failures.push(VideoFailure {
                    video_id: entry.video_id,
                    message,
                });
            }
        }
    }
    summary
        .stage_seconds
        .push(("extract".into(), start.elapsed().as_secs_f64()));
    if out.is_empty() {
        return Err(PipelineError::NothingSucceeded);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub source: String,
    pub kind: SourceKind,
    pub score: VideoScore,
}

/// Contents of `scores.json`: one record per (video, model, mode, metric).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub format_version: u32,
    pub metadata: RunMetadata,
    pub models: Vec<String>,
    pub metrics: Vec<MetricKind>,
    pub modes: Vec<ScoreMode>,
    pub records: Vec<ScoreRecord>,
}

impl ScoreFile {
    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let file: ScoreFile = serde_json::from_str(&text).map_err(|e| PipelineError::ScoreFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if file.format_version != SCORE_FORMAT_VERSION {
            return Err(PipelineError::ScoreFile {
                path: path.to_path_buf(),
                message: format!("format_version {} unsupported", file.format_version),
            });
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        write_file(
            path,
            &(serde_json::to_string_pretty(self).expect("scores serialize") + "\n"),
        )
    }

    pub fn scored(&self) -> impl Iterator<Item = &crate::consistency::ConsistencyScore> {
        self.records.iter().filter_map(|r| match &r.score {
            VideoScore::Scored(s) => Some(s),
            VideoScore::Unscorable(_) => None,
        })
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// Scores of one embedding set under every requested (mode, metric).
fn score_set(plan: &Plan, set: &EmbeddingSet) -> Result<Vec<VideoScore>, ScoreError> {
    let mut out = Vec::new();
    for &mode in &plan.modes {
        for &metric in &plan.metrics {
            let valid = set.valid_frames();
            if valid < 2 {
                out.push(VideoScore::Unscorable(UnscorableVideo {
                    video_id: set.video_id.clone(),
                    model_id: set.model_id.clone(),
                    metric,
                    mode,
                    valid_frames: valid,
                }));
                continue;
            }
            let score = match mode {
                ScoreMode::Mode1 => {
                    let reference = select_reference(set, plan.manifest.mode1.reference, metric)?;
                    score_mode1(set, reference, metric, plan.include_self)?
                }
                ScoreMode::Mode2 => score_mode2(set, plan.manifest.mode2.num_pairs, plan.manifest.seed, metric)?,
            };
            out.push(VideoScore::Scored(score));
        }
    }
    Ok(out)
}

/// Scores every extracted video. Videos whose scoring fails (for example an
/// out-of-range reference index) are recorded as failures.
pub fn score(plan: &Plan, videos: &[VideoEmbeddings], summary: &mut RunSummary) -> ScoreFile {
    let start = Instant::now();
    let results = plan.executor.map_ref(videos, |v| {
        v.sets
            .iter()
            .map(|s| score_set(plan, s))
            .collect::<Result<Vec<_>, _>>()
            .map(|per_model| per_model.into_iter().flatten().collect::<Vec<_>>())
    });
    let mut records = Vec::new();
    for (v, result) in videos.iter().zip(results) {
        match result {
            Ok(scores) => {
                for s in scores {
                    if let VideoScore::Unscorable(u) = &s {
                        let w = format!(
                            "{}: unscorable for {} ({} valid frame(s))",
                            u.video_id, u.model_id, u.valid_frames
                        );
                        if !summary.warnings.contains(&w) {
                            log::warn!("{w}");
                            summary.warnings.push(w);
                        }
                    }
                    records.push(ScoreRecord {
                        source: v.entry.source.clone(),
                        kind: v.entry.kind,
                        score: s,
                    });
                }
            }
            Err(e) => {
                summary.videos_failed += 1;
                summary.videos_processed = summary.videos_processed.saturating_sub(1);
                summary.failures.push(VideoFailure {
                    video_id: v.entry.video_id.clone(),
                    message: e.to_string(),
                });
            }
        }
    }
    summary
        .stage_seconds
        .push(("score".into(), start.elapsed().as_secs_f64()));
    ScoreFile {
        format_version: SCORE_FORMAT_VERSION,
        metadata: plan.metadata(),
        models: plan.specs.iter().map(|s| s.id.clone()).collect(),
        metrics: plan.metrics.clone(),
        modes: plan.modes.clone(),
        records,
    }
}

/// One report per (mode, metric) in the score file, over the manifest's
/// source grid.
pub fn build_reports(manifest: &Manifest, scores: &ScoreFile) -> Result<Vec<BenchmarkReport>, PipelineError> {
    let layout = ReportLayout {
        sources: manifest.sources.iter().map(|s| (s.name.clone(), s.kind)).collect(),
        models: scores.models.clone(),
    };
    let mut reports = Vec::new();
    for &mode in &scores.modes {
        for &metric in &scores.metrics {
            // (source, model) -> scores, in record order
            let mut groups: BTreeMap<(&str, &str), Vec<VideoScore>> = BTreeMap::new();
            for r in &scores.records {
                let (m, mm, md) = match &r.score {
                    VideoScore::Scored(s) => (&s.model_id, s.metric, s.mode),
                    VideoScore::Unscorable(u) => (&u.model_id, u.metric, u.mode),
                };
                if mm == metric && md == mode {
                    groups.entry((&r.source, m)).or_default().push(r.score.clone());
                }
            }
            let mut cells = Vec::new();
            for ((source, model), group) in groups {
                match aggregate_source(source, &group) {
                    Ok(agg) => cells.push(GridCell::Scored(agg)),
                    Err(ScoreError::NoScorableVideos { unscorable }) => cells.push(GridCell::Unscorable {
                        source_name: source.to_string(),
                        model_id: model.to_string(),
                        metric,
                        mode,
                        n_unscorable: unscorable,
                    }),
                    Err(e) => {
                        return Err(PipelineError::ScoreFile {
                            path: PathBuf::from(SCORE_FILE),
                            message: format!("{source}/{model}: {e}"),
                        })
                    }
                }
            }
            reports.push(build_report(mode, metric, &layout, &cells, scores.metadata.clone())?);
        }
    }
    Ok(reports)
}

pub fn report_file_name(mode: ScoreMode, metric: MetricKind, format: TableFormat) -> String {
    format!("table_{mode}_{metric}.{}", format.extension())
}

pub fn plot_file_name(metric: MetricKind) -> String {
    format!("plot_data_{metric}.csv")
}

/// Renders tables (and plot data when both modes are present) into
/// `out_dir`; returns the written paths.
pub fn write_reports(
    reports: &[BenchmarkReport],
    formats: &[TableFormat],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    let mut written = Vec::new();
    for r in reports {
        for &f in formats {
            let path = out_dir.join(report_file_name(r.mode, r.metric, f));
            write_file(&path, &r.render(f))?;
            written.push(path);
        }
    }
    let mut metrics: Vec<MetricKind> = Vec::new();
    for r in reports {
        if !metrics.contains(&r.metric) {
            metrics.push(r.metric);
        }
    }
    for metric in metrics {
        let find = |mode| reports.iter().find(|r| r.metric == metric && r.mode == mode);
        if let (Some(m1), Some(m2)) = (find(ScoreMode::Mode1), find(ScoreMode::Mode2)) {
            let path = out_dir.join(plot_file_name(metric));
            write_file(&path, &emit_plot_data(m1, m2)?)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Result of a command: the summary plus the process exit code
/// (0 success, 2 some videos failed).
pub struct Outcome {
    pub summary: RunSummary,
    pub written: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        self.summary.exit_code()
    }
}

pub fn cmd_extract(plan: &Plan) -> Result<Outcome, PipelineError> {
    let mut summary = RunSummary::default();
    extract(plan, &mut summary)?;
    Ok(Outcome {
        summary,
        written: Vec::new(),
    })
}

pub fn cmd_score(plan: &Plan) -> Result<(Outcome, ScoreFile), PipelineError> {
    let mut summary = RunSummary::default();
    let videos = extract(plan, &mut summary)?;
    let scores = score(plan, &videos, &mut summary);
    let path = plan.out_dir.join(SCORE_FILE);
    scores.write(&path)?;
    Ok((
        Outcome {
            summary,
            written: vec![path],
        },
        scores,
    ))
}

pub fn cmd_report(plan: &Plan, scores_path: &Path) -> Result<Outcome, PipelineError> {
    let start = Instant::now();
    let scores = ScoreFile::read(scores_path)?;
    let reports = build_reports(&plan.manifest, &scores)?;
    let written = write_reports(&reports, &plan.formats, &plan.out_dir)?;
    let mut summary = RunSummary::default();
    summary
        .stage_seconds
        .push(("report".into(), start.elapsed().as_secs_f64()));
    Ok(Outcome { summary, written })
}

pub fn cmd_run(plan: &Plan) -> Result<Outcome, PipelineError> {
    let (mut outcome, scores) = cmd_score(plan)?;
    let start = Instant::now();
    let reports = build_reports(&plan.manifest, &scores)?;
    outcome
        .written
        .extend(write_reports(&reports, &plan.formats, &plan.out_dir)?);
    outcome
        .summary
        .stage_seconds
        .push(("report".into(), start.elapsed().as_secs_f64()));
    Ok(outcome)
}
