//! Run manifest: sources, models, metric and mode parameters.
//!
//! The manifest is a TOML file:
//!
//! ```toml
//! models = ["arcface", "facenet512"]
//! metric = "cosine"            # cosine | euclidean | euclidean_l2
//! max_dim = 720
//! seed = 0
//! output_dir = "results"
//! registry = "models/registry.json"   # optional, built-in registry otherwise
//!
//! [mode1]
//! reference = "first_valid"    # first_valid | index:<k> | medoid
//!
//! [mode2]
//! num_pairs = 200
//!
//! [detector]                   # optional, full_frame otherwise
//! kind = "neural"              # full_frame | stub | neural
//! model = "models/ultraface-320.onnx"
//! threshold = 0.6
//!
//! [[sources]]
//! name = "real"
//! kind = "real"
//! videos = ["videos/real/clip01.mp4"]
//! ```
//!
//! Relative paths are resolved against the manifest's directory. Unknown keys
//! are rejected.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;
use toml::Spanned;

use crate::consistency::MetricKind;
use crate::embed::{ModelRegistry, ModelSpec, RegistryError};
use crate::facegate::{DetectorConfig, DetectorKind, DEFAULT_DETECTOR_INPUT, DEFAULT_MARGIN, DEFAULT_THRESHOLD};

pub const DEFAULT_NUM_PAIRS: usize = 200;
pub const DEFAULT_MAX_DIM: u32 = 720;
pub const DEFAULT_OUTPUT_DIR: &str = "results";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("{}:{line}: {message}", path.display())]
    Invalid {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {message}", path.display())]
    Semantic { path: PathBuf, message: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Real,
    Generated,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Real => "real",
            SourceKind::Generated => "generated",
        }
    }
}

impl FromStr for SourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "real" => Ok(SourceKind::Real),
            "generated" => Ok(SourceKind::Generated),
            _ => Err(format!("unknown source kind {s:?} (expected real or generated)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceGroup {
    pub name: String,
    pub kind: SourceKind,
    pub videos: Vec<PathBuf>,
}

/// Mode 1 reference frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceChoice {
    #[default]
    FirstValid,
    /// The k-th valid frame (0-based, counting only frames with a face).
    Index(u64),
    Medoid,
}

impl fmt::Display for ReferenceChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReferenceChoice::FirstValid => f.write_str("first_valid"),
            ReferenceChoice::Index(k) => write!(f, "index:{k}"),
            ReferenceChoice::Medoid => f.write_str("medoid"),
        }
    }
}

impl FromStr for ReferenceChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "first_valid" => Ok(ReferenceChoice::FirstValid),
            "medoid" => Ok(ReferenceChoice::Medoid),
            _ => s
                .strip_prefix("index:")
                .and_then(|k| k.parse::<u64>().ok())
                .map(ReferenceChoice::Index)
                .ok_or_else(|| format!("invalid reference {s:?} (expected first_valid, index:<k> or medoid)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Mode1Config {
    pub reference: ReferenceChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode2Config {
    pub num_pairs: usize,
}

impl Default for Mode2Config {
    fn default() -> Self {
        Mode2Config {
            num_pairs: DEFAULT_NUM_PAIRS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub sources: Vec<SourceGroup>,
    pub models: Vec<String>,
    pub metric: MetricKind,
    pub mode1: Mode1Config,
    pub mode2: Mode2Config,
    pub max_dim: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Model registry file; `None` means the built-in registry.
    pub registry: Option<PathBuf>,
    pub detector: DetectorConfig,
}

/// One video of a manifest, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEntry {
    pub source: String,
    pub kind: SourceKind,
    /// `<source>/<file name>`, unique within a manifest.
    pub video_id: String,
    pub path: PathBuf,
}

fn video_id(source: &str, path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned());
    format!("{source}/{name}")
}

impl Manifest {
    pub fn videos(&self) -> Vec<VideoEntry> {
        self.sources
            .iter()
            .flat_map(|s| {
                s.videos.iter().map(|p| VideoEntry {
                    source: s.name.clone(),
                    kind: s.kind,
                    video_id: video_id(&s.name, p),
                    path: p.clone(),
                })
            })
            .collect()
    }

    pub fn load_registry(&self) -> Result<ModelRegistry, RegistryError> {
        match &self.registry {
            Some(p) => ModelRegistry::load(p),
            None => Ok(ModelRegistry::builtin()),
        }
    }

    pub fn source(&self, name: &str) -> Option<&SourceGroup> {
        self.sources.iter().find(|s| s.name == name)
    }

    /// Serializes to manifest TOML with absolute paths.
    pub fn to_toml(&self) -> String {
        let detector = match &self.detector.kind {
            DetectorKind::FullFrame => RawDetector {
                kind: "full_frame".into(),
                margin: Some(self.detector.margin),
                ..RawDetector::default()
            },
            DetectorKind::Stub { script } => RawDetector {
                kind: "stub".into(),
                script: Some(path_string(script)),
                margin: Some(self.detector.margin),
                ..RawDetector::default()
            },
            DetectorKind::Neural {
                model,
                threshold,
                input_size,
            } => RawDetector {
                kind: "neural".into(),
                model: Some(path_string(model)),
                threshold: Some(*threshold),
                input_size: Some(*input_size),
                margin: Some(self.detector.margin),
                ..RawDetector::default()
            },
        };
        let out = OutManifest {
            models: self.models.clone(),
            metric: self.metric.as_str().to_string(),
            max_dim: self.max_dim,
            seed: if self.seed <= i64::MAX as u64 {
                toml::Value::Integer(self.seed as i64)
            } else {
                toml::Value::String(self.seed.to_string())
            },
            output_dir: path_string(&self.output_dir),
            registry: self.registry.as_deref().map(path_string),
            mode1: OutMode1 {
                reference: self.mode1.reference.to_string(),
            },
            mode2: OutMode2 {
                num_pairs: self.mode2.num_pairs,
            },
            detector,
            sources: self
                .sources
                .iter()
                .map(|s| OutSource {
                    name: s.name.clone(),
                    kind: s.kind.as_str().to_string(),
                    videos: s.videos.iter().map(|p| path_string(p)).collect(),
                })
                .collect(),
        };
        toml::to_string(&out).expect("manifest serializes")
    }
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[derive(Serialize)]
struct OutManifest {
    models: Vec<String>,
    metric: String,
    max_dim: u32,
    seed: toml::Value,
    output_dir: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    registry: Option<String>,
    mode1: OutMode1,
    mode2: OutMode2,
    detector: RawDetector,
    sources: Vec<OutSource>,
}

#[derive(Serialize)]
struct OutMode1 {
    reference: String,
}

#[derive(Serialize)]
struct OutMode2 {
    num_pairs: usize,
}

#[derive(Serialize)]
struct OutSource {
    name: String,
    kind: String,
    videos: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    sources: Spanned<Vec<RawSource>>,
    models: Spanned<Vec<Spanned<String>>>,
    metric: Option<Spanned<String>>,
    mode1: Option<RawMode1>,
    mode2: Option<RawMode2>,
    max_dim: Option<Spanned<i64>>,
    seed: Option<Spanned<SeedRepr>>,
    output_dir: Option<String>,
    registry: Option<Spanned<String>>,
    detector: Option<Spanned<RawDetector>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SeedRepr {
    Int(i64),
    Text(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    name: Spanned<String>,
    kind: Spanned<String>,
    videos: Vec<Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMode1 {
    reference: Option<Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMode2 {
    num_pairs: Option<Spanned<i64>>,
}

#[derive(Deserialize, Serialize, Default)]
#[serde(deny_unknown_fields)]
struct RawDetector {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    input_size: Option<[u32; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    script: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    margin: Option<f32>,
}

/// Resolves byte offsets to 1-based line numbers.
struct Lines<'a> {
    text: &'a str,
    path: &'a Path,
}

impl Lines<'_> {
    fn line_of(&self, offset: usize) -> usize {
        let end = offset.min(self.text.len());
        self.text.as_bytes()[..end].iter().filter(|&&b| b == b'\n').count() + 1
    }

    fn err<T>(&self, spanned: &Spanned<T>, message: impl Into<String>) -> ManifestError {
        ManifestError::Invalid {
            path: self.path.to_path_buf(),
            line: self.line_of(spanned.span().start),
            message: message.into(),
        }
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads, fills defaults and validates a manifest, including that every
/// video path exists and every model id resolves in the manifest's registry.
pub fn load_manifest(path: &Path) -> Result<Manifest, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|e| ManifestError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path
        .parent()
        .map(|p| if p.as_os_str().is_empty() { Path::new(".") } else { p })
        .unwrap_or(Path::new("."));
    let base = base.canonicalize().map_err(|e| ManifestError::Io {
        path: base.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_manifest(&text, path, &base)
}

/// Parses manifest text; relative paths resolve against `base`. `path` is
/// used for error messages only.
pub fn parse_manifest(text: &str, path: &Path, base: &Path) -> Result<Manifest, ManifestError> {
    let lines = Lines { text, path };
    let raw: RawManifest = toml::from_str(text).map_err(|e| ManifestError::Invalid {
        path: path.to_path_buf(),
        line: e.span().map(|s| lines.line_of(s.start)).unwrap_or(1),
        message: e.message().trim().to_string(),
    })?;

    if raw.sources.get_ref().is_empty() {
        return Err(lines.err(&raw.sources, "at least one source is required"));
    }
    let mut names = BTreeSet::new();
    let mut ids = BTreeSet::new();
    let mut sources = Vec::new();
    for s in raw.sources.into_inner() {
        let name = s.name.get_ref().trim();
        if name.is_empty() || name.contains('/') {
            return Err(lines.err(&s.name, format!("invalid source name {:?}", s.name.get_ref())));
        }
        if !names.insert(name.to_string()) {
            return Err(lines.err(&s.name, format!("duplicate source name {name:?}")));
        }
        let kind = s
            .kind
            .get_ref()
            .parse::<SourceKind>()
            .map_err(|m| lines.err(&s.kind, m))?;
        if s.videos.is_empty() {
            return Err(lines.err(&s.name, format!("source {name:?} lists no videos")));
        }
        let mut videos = Vec::new();
        for v in &s.videos {
            let p = resolve(base, v.get_ref());
            if !p.exists() {
                return Err(lines.err(v, format!("video not found: {}", p.display())));
            }
            if !ids.insert(video_id(name, &p)) {
                return Err(lines.err(
                    v,
                    format!("duplicate video {:?} in source {name:?}", video_id(name, &p)),
                ));
            }
            videos.push(p);
        }
        sources.push(SourceGroup {
            name: name.to_string(),
            kind,
            videos,
        });
    }

    let models_span = raw.models.span();
    let raw_models = raw.models.into_inner();
    if raw_models.is_empty() {
        return Err(ManifestError::Invalid {
            path: path.to_path_buf(),
            line: lines.line_of(models_span.start),
            message: "at least one model is required".into(),
        });
    }
    let mut models: Vec<String> = Vec::new();
    for m in &raw_models {
        if models.contains(m.get_ref()) {
            return Err(lines.err(m, format!("duplicate model {:?}", m.get_ref())));
        }
        models.push(m.get_ref().clone());
    }

    let metric = match &raw.metric {
        Some(m) => m.get_ref().parse::<MetricKind>().map_err(|e| lines.err(m, e))?,
        None => MetricKind::default(),
    };
    let reference = match raw.mode1.as_ref().and_then(|m| m.reference.as_ref()) {
        Some(r) => r.get_ref().parse::<ReferenceChoice>().map_err(|e| lines.err(r, e))?,
        None => ReferenceChoice::default(),
    };
    let num_pairs = match raw.mode2.as_ref().and_then(|m| m.num_pairs.as_ref()) {
        Some(n) if *n.get_ref() >= 1 => *n.get_ref() as usize,
        Some(n) => return Err(lines.err(n, "mode2.num_pairs must be at least 1")),
        None => DEFAULT_NUM_PAIRS,
    };
    let max_dim = match &raw.max_dim {
        Some(d) if (1..=u32::MAX as i64).contains(d.get_ref()) => *d.get_ref() as u32,
        Some(d) => return Err(lines.err(d, "max_dim must be a positive integer")),
        None => DEFAULT_MAX_DIM,
    };
    let seed = match &raw.seed {
        None => 0,
        Some(s) => match s.get_ref() {
            SeedRepr::Int(v) if *v >= 0 => *v as u64,
            SeedRepr::Text(t) => t
                .parse::<u64>()
                .map_err(|_| lines.err(s, format!("seed {t:?} is not an unsigned 64-bit integer")))?,
            SeedRepr::Int(_) => return Err(lines.err(s, "seed must be non-negative")),
        },
    };
    let output_dir = resolve(base, raw.output_dir.as_deref().unwrap_or(DEFAULT_OUTPUT_DIR));
    let registry = match &raw.registry {
        Some(r) => {
            let p = resolve(base, r.get_ref());
            if !p.is_file() {
                return Err(lines.err(r, format!("registry not found: {}", p.display())));
            }
            Some(p)
        }
        None => None,
    };
    let detector = match &raw.detector {
        Some(d) => parse_detector(d, &lines, base)?,
        None => DetectorConfig::default(),
    };

    let manifest = Manifest {
        sources,
        models,
        metric,
        mode1: Mode1Config { reference },
        mode2: Mode2Config { num_pairs },
        max_dim,
        seed,
        output_dir,
        registry,
        detector,
    };

    let registry = manifest.load_registry()?;
    for m in &raw_models {
        if registry.get(m.get_ref()).is_none() {
            return Err(lines.err(
                m,
                format!(
                    "unknown model {:?} (available: {})",
                    m.get_ref(),
                    registry.ids().join(", ")
                ),
            ));
        }
    }
    Ok(manifest)
}

fn parse_detector(d: &Spanned<RawDetector>, lines: &Lines, base: &Path) -> Result<DetectorConfig, ManifestError> {
    let raw = d.get_ref();
    let margin = raw.margin.unwrap_or(DEFAULT_MARGIN);
    if !(0.0..=2.0).contains(&margin) {
        return Err(lines.err(d, "detector.margin must be within [0, 2]"));
    }
    let unused = |keys: &[(&str, bool)]| -> Result<(), ManifestError> {
        match keys.iter().find(|(_, set)| *set) {
            Some((k, _)) => Err(lines.err(d, format!("detector.{k} does not apply to kind {:?}", raw.kind))),
            None => Ok(()),
        }
    };
    let kind = match raw.kind.as_str() {
        "full_frame" => {
            unused(&[
                ("model", raw.model.is_some()),
                ("threshold", raw.threshold.is_some()),
                ("input_size", raw.input_size.is_some()),
                ("script", raw.script.is_some()),
            ])?;
            DetectorKind::FullFrame
        }
        "stub" => {
            unused(&[
                ("model", raw.model.is_some()),
                ("threshold", raw.threshold.is_some()),
                ("input_size", raw.input_size.is_some()),
            ])?;
            let script = raw
                .script
                .as_deref()
                .ok_or_else(|| lines.err(d, "stub detector requires `script`"))?;
            let script = resolve(base, script);
            if !script.exists() {
                return Err(lines.err(d, format!("stub script not found: {}", script.display())));
            }
            DetectorKind::Stub { script }
        }
        "neural" => {
            unused(&[("script", raw.script.is_some())])?;
            let model = raw
                .model
                .as_deref()
                .ok_or_else(|| lines.err(d, "neural detector requires `model`"))?;
            let model = resolve(base, model);
            if !model.is_file() {
                return Err(lines.err(d, format!("detector model not found: {}", model.display())));
            }
            let threshold = raw.threshold.unwrap_or(DEFAULT_THRESHOLD);
            if !(0.0..=1.0).contains(&threshold) {
                return Err(lines.err(d, "detector.threshold must be within [0, 1]"));
            }
            let input_size = raw.input_size.unwrap_or(DEFAULT_DETECTOR_INPUT);
            if input_size.contains(&0) {
                return Err(lines.err(d, "detector.input_size must be positive"));
            }
            DetectorKind::Neural {
                model,
                threshold,
                input_size,
            }
        }
        other => {
            return Err(lines.err(
                d,
                format!("unknown detector kind {other:?} (expected full_frame, stub or neural)"),
            ))
        }
    };
    Ok(DetectorConfig { kind, margin })
}

/// Resolves the manifest's model ids against `registry`, in manifest order.
pub fn validate_against_registry(m: &Manifest, registry: &ModelRegistry) -> Result<Vec<ModelSpec>, ManifestError> {
    Ok(registry.resolve(&m.models)?)
}
