//! Benchmark tables, exports and plot data.
//!
//! A report covers one (mode, metric) pair: one row per source, one column
//! per model. Real sources are listed first as the baseline, then generated
//! sources in manifest order. Per model column, the generated source(s)
//! with the lowest mean are marked bold; real rows are never bold.
//!
//! Numbers are printed with 4 decimals (`{:.4}`, which rounds the exact
//! binary value half-to-even). JSON exports carry the full-precision value
//! next to the printed one.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use thiserror::Error;

use crate::consistency::{MetricKind, ScoreMode, SourceAggregate};
use crate::manifest::{Manifest, SourceKind};

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("no value for source {source_name:?}, model {model:?}")]
    MissingCell { source_name: String, model: String },
    #[error("cell for source {source_name:?}, model {model:?} given twice")]
    DuplicateCell { source_name: String, model: String },
    #[error("cell for source {source_name:?}, model {model:?} is outside the report grid")]
    UnexpectedCell { source_name: String, model: String },
    #[error("cell for {source_name:?}/{model:?} has mode/metric {found}, report is {expected}")]
    WrongSlice {
        source_name: String,
        model: String,
        found: String,
        expected: String,
    },
    #[error("mode 1 and mode 2 reports cover different sources or models")]
    GridMismatch,
    #[error("expected a {0} report")]
    WrongMode(ScoreMode),
    #[error("report has no generated sources")]
    NoGeneratedSources,
    #[error("invalid report JSON: {0}")]
    Json(String),
}

/// Formats a table value.
pub fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

/// Settings that produced a report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub num_pairs: usize,
    pub max_dim: u32,
    pub stride: usize,
    pub reference: String,
    pub include_self: bool,
    pub registry_hash: String,
    pub toolkit_version: String,
}

/// Input for one (source, model) cell.
#[derive(Debug, Clone, PartialEq)]
pub enum GridCell {
    Scored(SourceAggregate),
    /// Every video of the source was unscorable for this model.
    Unscorable {
        source_name: String,
        model_id: String,
        metric: MetricKind,
        mode: ScoreMode,
        n_unscorable: usize,
    },
}

impl GridCell {
    fn key(&self) -> (&str, &str, MetricKind, ScoreMode) {
        match self {
            GridCell::Scored(a) => (&a.source_name, &a.model_id, a.metric, a.mode),
            GridCell::Unscorable {
                source_name,
                model_id,
                metric,
                mode,
                ..
            } => (source_name, model_id, *metric, *mode),
        }
    }
}

/// Sources (in manifest order) and model columns of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportLayout {
    pub sources: Vec<(String, SourceKind)>,
    pub models: Vec<String>,
}

impl ReportLayout {
    pub fn from_manifest(m: &Manifest) -> Self {
        ReportLayout {
            sources: m.sources.iter().map(|s| (s.name.clone(), s.kind)).collect(),
            models: m.models.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub model: String,
    /// `None` when no video of the source was scorable.
    pub mean: Option<f64>,
    pub display: String,
    pub std_mean_across_videos: Option<f64>,
    pub n_videos: usize,
    pub n_unscorable: usize,
    pub is_bold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub source: String,
    pub kind: SourceKind,
    /// One cell per model column, in column order.
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub mode: ScoreMode,
    pub metric: MetricKind,
    pub models: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub metadata: RunMetadata,
}

pub const UNSCORABLE_MARK: &str = "n/a";

/// Assembles the (source x model) grid for one mode and metric.
pub fn build_report(
    mode: ScoreMode,
    metric: MetricKind,
    layout: &ReportLayout,
    cells: &[GridCell],
    metadata: RunMetadata,
) -> Result<BenchmarkReport, ReportError> {
    let mut seen = BTreeSet::new();
    for c in cells {
        let (s, m, cm, cmode) = c.key();
        let err_key = || (s.to_string(), m.to_string());
        if !layout.sources.iter().any(|(n, _)| n == s) || !layout.models.iter().any(|x| x == m) {
            let (source_name, model) = err_key();
            return Err(ReportError::UnexpectedCell { source_name, model });
        }
        if cm != metric || cmode != mode {
            let (source_name, model) = err_key();
            return Err(ReportError::WrongSlice {
                source_name,
                model,
                found: format!("{cmode}/{cm}"),
                expected: format!("{mode}/{metric}"),
            });
        }
        if !seen.insert(err_key()) {
            let (source_name, model) = err_key();
            return Err(ReportError::DuplicateCell { source_name, model });
        }
    }

    let ordered = layout
        .sources
        .iter()
        .filter(|(_, k)| *k == SourceKind::Real)
        .chain(layout.sources.iter().filter(|(_, k)| *k == SourceKind::Generated));
    let mut rows = Vec::new();
    for (source, kind) in ordered {
        let mut row_cells = Vec::new();
        for model in &layout.models {
            let cell = cells
                .iter()
                .find(|c| {
                    let (s, m, _, _) = c.key();
                    s == source && m == model
                })
                .ok_or_else(|| ReportError::MissingCell {
                    source_name: source.clone(),
                    model: model.clone(),
                })?;
            row_cells.push(match cell {
                GridCell::Scored(a) => Cell {
                    model: model.clone(),
                    mean: Some(a.mean_of_video_means),
                    display: fmt4(a.mean_of_video_means),
                    std_mean_across_videos: Some(a.std_of_video_means),
                    n_videos: a.per_video.len(),
                    n_unscorable: a.n_unscorable,
                    is_bold: false,
                },
                GridCell::Unscorable { n_unscorable, .. } => Cell {
                    model: model.clone(),
                    mean: None,
                    display: UNSCORABLE_MARK.to_string(),
                    std_mean_across_videos: None,
                    n_videos: 0,
                    n_unscorable: *n_unscorable,
                    is_bold: false,
                },
            });
        }
        rows.push(ReportRow {
            source: source.clone(),
            kind: *kind,
            cells: row_cells,
        });
    }
    mark_column_minima(&mut rows, layout.models.len());
    Ok(BenchmarkReport {
        mode,
        metric,
        models: layout.models.clone(),
        rows,
        metadata,
    })
}

fn mark_column_minima(rows: &mut [ReportRow], columns: usize) {
    for col in 0..columns {
        let best = rows
            .iter()
            .filter(|r| r.kind == SourceKind::Generated)
            .filter_map(|r| r.cells[col].mean)
            .min_by(f64::total_cmp);
        if let Some(best) = best {
            for r in rows.iter_mut().filter(|r| r.kind == SourceKind::Generated) {
                r.cells[col].is_bold = r.cells[col].mean == Some(best);
            }
        }
    }
}

impl BenchmarkReport {
    /// `(source, model)` pairs rendered bold.
    pub fn bold_set(&self) -> BTreeSet<(String, String)> {
        self.rows
            .iter()
            .flat_map(|r| {
                r.cells
                    .iter()
                    .filter(|c| c.is_bold)
                    .map(|c| (r.source.clone(), c.model.clone()))
            })
            .collect()
    }

    pub fn cell(&self, source: &str, model: &str) -> Option<&Cell> {
        let col = self.models.iter().position(|m| m == model)?;
        self.rows.iter().find(|r| r.source == source).map(|r| &r.cells[col])
    }

    fn title(&self) -> String {
        let mode = match self.mode {
            ScoreMode::Mode1 => "Mode 1 (every frame vs. reference frame)",
            ScoreMode::Mode2 => "Mode 2 (random frame pairs)",
        };
        format!("{mode}, {} distance; lower is more consistent", self.metric)
    }

    fn footnotes(&self) -> Vec<String> {
        let mut notes = Vec::new();
        for r in &self.rows {
            for c in r.cells.iter().filter(|c| c.n_unscorable > 0) {
                notes.push(format!(
                    "{} / {}: {} of {} video(s) unscorable (fewer than 2 frames with a face), excluded",
                    r.source,
                    c.model,
                    c.n_unscorable,
                    c.n_videos + c.n_unscorable
                ));
            }
        }
        notes
    }

    fn metadata_lines(&self) -> Vec<String> {
        let m = &self.metadata;
        vec![
            format!("mode: {}", self.mode),
            format!("metric: {}", self.metric),
            format!("seed: {}", m.seed),
            format!("num_pairs: {}", m.num_pairs),
            format!("max_dim: {}", m.max_dim),
            format!("stride: {}", m.stride),
            format!("reference: {}", m.reference),
            format!("include_self: {}", m.include_self),
            format!("registry_hash: {}", m.registry_hash),
            format!("toolkit_version: {}", m.toolkit_version),
        ]
    }

    pub fn render(&self, format: TableFormat) -> String {
        match format {
            TableFormat::Plain => self.render_plain(),
            TableFormat::Markdown => self.render_markdown(),
            TableFormat::Csv => self.render_csv(),
            TableFormat::Json => self.render_json(),
        }
    }

    fn render_plain(&self) -> String {
        let header: Vec<String> = std::iter::once("source".to_string())
            .chain(self.models.iter().cloned())
            .collect();
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                std::iter::once(r.source.clone())
                    .chain(r.cells.iter().map(|c| {
                        if c.is_bold {
                            format!("*{}*", c.display)
                        } else {
                            c.display.clone()
                        }
                    }))
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| {
                body.iter()
                    .map(|r| r[i].len())
                    .chain(std::iter::once(header[i].len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| -> String {
            let parts: Vec<String> = cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{c:<w$}", w = widths[i])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        let mut out = String::new();
        writeln!(out, "{}", self.title()).unwrap();
        writeln!(out).unwrap();
        writeln!(out, "{}", line(&header)).unwrap();
        let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
        writeln!(out, "{}", "-".repeat(rule)).unwrap();
        for (i, r) in body.iter().enumerate() {
            if i > 0 && self.rows[i - 1].kind == SourceKind::Real && self.rows[i].kind == SourceKind::Generated {
                writeln!(out, "{}", "-".repeat(rule)).unwrap();
            }
            writeln!(out, "{}", line(r)).unwrap();
        }
        writeln!(out).unwrap();
        writeln!(out, "* lowest value among generated sources").unwrap();
        for n in self.footnotes() {
            writeln!(out, "{UNSCORABLE_MARK}: {n}").unwrap();
        }
        writeln!(out).unwrap();
        for l in self.metadata_lines() {
            writeln!(out, "{l}").unwrap();
        }
        out
    }

    fn render_markdown(&self) -> String {
        let mut out = String::new();
        writeln!(out, "### {}", self.title()).unwrap();
        writeln!(out).unwrap();
        writeln!(out, "| Source | {} |", self.models.join(" | ")).unwrap();
        writeln!(out, "|---|{}", "---:|".repeat(self.models.len())).unwrap();
        for r in &self.rows {
            let cells: Vec<String> = r
                .cells
                .iter()
                .map(|c| {
                    if c.is_bold {
                        format!("**{}**", c.display)
                    } else {
                        c.display.clone()
                    }
                })
                .collect();
            writeln!(out, "| {} | {} |", r.source, cells.join(" | ")).unwrap();
        }
        writeln!(out).unwrap();
        writeln!(out, "Bold: lowest value among generated sources.").unwrap();
        for n in self.footnotes() {
            writeln!(out, "- {UNSCORABLE_MARK}: {n}").unwrap();
        }
        writeln!(out).unwrap();
        writeln!(out, "<!-- {} -->", self.metadata_lines().join("; ")).unwrap();
        out
    }

    fn csv_writer() -> csv::Writer<Vec<u8>> {
        csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new())
    }

    fn metadata_comment(&self) -> String {
        self.metadata_lines().iter().map(|l| format!("# {l}\n")).collect()
    }

    fn render_csv(&self) -> String {
        let mut w = Self::csv_writer();
        w.write_record(CSV_COLUMNS).unwrap();
        for r in &self.rows {
            for c in &r.cells {
                w.write_record([
                    self.mode.as_str(),
                    self.metric.as_str(),
                    &r.source,
                    r.kind.as_str(),
                    &c.model,
                    &c.display,
                    &c.std_mean_across_videos
                        .map(fmt4)
                        .unwrap_or_else(|| UNSCORABLE_MARK.into()),
                    &c.n_videos.to_string(),
                    &c.n_unscorable.to_string(),
                    if c.is_bold { "true" } else { "false" },
                ])
                .unwrap();
            }
        }
        let body = String::from_utf8(w.into_inner().unwrap()).unwrap();
        self.metadata_comment() + &body
    }

    fn render_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        serde_json::from_str(text).map_err(|e| ReportError::Json(e.to_string()))
    }
}

pub const CSV_COLUMNS: [&str; 10] = [
    "mode",
    "metric",
    "source",
    "kind",
    "model",
    "mean",
    "std_mean_across_videos",
    "n_videos",
    "n_unscorable",
    "is_bold",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Plain,
    Markdown,
    Csv,
    Json,
}

impl TableFormat {
    pub const ALL: [TableFormat; 4] = [
        TableFormat::Plain,
        TableFormat::Markdown,
        TableFormat::Csv,
        TableFormat::Json,
    ];

    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Plain => "txt",
            TableFormat::Markdown => "md",
            TableFormat::Csv => "csv",
            TableFormat::Json => "json",
        }
    }
}

/// Long-format `(mode, source, model, mean)` records for grouped bar charts,
/// mode 1 rows first. Values are the printed table cells.
pub fn emit_plot_data(mode1: &BenchmarkReport, mode2: &BenchmarkReport) -> Result<String, ReportError> {
    if mode1.mode != ScoreMode::Mode1 {
        return Err(ReportError::WrongMode(ScoreMode::Mode1));
    }
    if mode2.mode != ScoreMode::Mode2 {
        return Err(ReportError::WrongMode(ScoreMode::Mode2));
    }
    let grid = |r: &BenchmarkReport| -> Vec<(String, SourceKind)> {
        r.rows.iter().map(|x| (x.source.clone(), x.kind)).collect()
    };
    if mode1.models != mode2.models || grid(mode1) != grid(mode2) || mode1.metric != mode2.metric {
        return Err(ReportError::GridMismatch);
    }
    if !mode1.rows.iter().any(|r| r.kind == SourceKind::Generated) {
        return Err(ReportError::NoGeneratedSources);
    }
    let mut w = BenchmarkReport::csv_writer();
    w.write_record(["mode", "source", "model", "mean"]).unwrap();
    for r in [mode1, mode2] {
        for row in &r.rows {
            for c in &row.cells {
                w.write_record([r.mode.as_str(), &row.source, &c.model, &c.display])
                    .unwrap();
            }
        }
    }
    let body = String::from_utf8(w.into_inner().unwrap()).unwrap();
    let meta: String = mode1
        .metadata_lines()
        .iter()
        .filter(|l| !l.starts_with("mode:"))
        .map(|l| format!("# {l}\n"))
        .collect();
    Ok(meta + &body)
}
