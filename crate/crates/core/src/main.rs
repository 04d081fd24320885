use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use face_consistency::consistency::{MetricKind, ScoreMode};
use face_consistency::manifest::{load_manifest, ReferenceChoice};
use face_consistency::pipeline::{self, Outcome, PipelineError, Plan, RunOptions, CACHE_DIR_ENV, SCORE_FILE};
use face_consistency::report::TableFormat;

/// Facial consistency of characters across video frames.
///
/// Progress and warnings go to standard error (set RUST_LOG=debug for more);
/// results are written under the output directory. Exit status: 0 success,
/// 2 some videos failed, 1 fatal error.
#[derive(Parser)]
#[command(name = "facecon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode, detect, align and embed every video into the cache.
    Extract {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score cached embeddings (extracting what is missing) into scores.json.
    Score {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        score: ScoreArgs,
    },
    /// Render tables and plot data from scores.json.
    Report {
        #[command(flatten)]
        target: ReportTarget,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// extract + score + report.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        score: ScoreArgs,
        #[command(flatten)]
        report: ReportArgs,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Run manifest (TOML).
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated model ids; defaults to the manifest's list.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Longest frame side after downscaling.
    #[arg(long)]
    max_dim: Option<u32>,
    /// Keep every n-th decoded frame.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Worker threads (default: all cores; 1 runs sequentially).
    #[arg(long)]
    jobs: Option<usize>,
    /// Embedding cache directory (default: <out>/cache).
    #[arg(long, env = CACHE_DIR_ENV)]
    cache_dir: Option<PathBuf>,
    /// Output directory (default: the manifest's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Plain,
    Markdown,
    Csv,
    Json,
    All,
}

#[derive(Clone)]
struct MetricList(Vec<MetricKind>);

fn parse_metrics(s: &str) -> Result<MetricList, String> {
    if s == "all" {
        return Ok(MetricList(MetricKind::ALL.to_vec()));
    }
    let mut out = Vec::new();
    for part in s.split(',') {
        let m: MetricKind = part.trim().parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(MetricList(out))
}

#[derive(Args)]
struct ScoreArgs {
    /// cosine, euclidean, euclidean_l2, a comma-separated list, or all
    /// (default: the manifest's metric).
    #[arg(long, value_parser = parse_metrics)]
    metric: Option<MetricList>,
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
    /// Mode 2 pair count (default: manifest, 200).
    #[arg(long)]
    pairs: Option<usize>,
    /// Mode 2 sampling seed (default: manifest, 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Mode 1 reference: first_valid, index:<k> or medoid.
    #[arg(long)]
    reference: Option<ReferenceChoice>,
    /// Count the reference frame's zero self-distance in Mode 1.
    #[arg(long)]
    include_self: bool,
}

#[derive(Args)]
struct ReportTarget {
    /// Run manifest (TOML).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory holding scores.json (default: the manifest's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, value_enum, default_value = "all")]
    format: FormatArg,
}

impl ModeArg {
    fn modes(self) -> Vec<ScoreMode> {
        match self {
            ModeArg::One => vec![ScoreMode::Mode1],
            ModeArg::Two => vec![ScoreMode::Mode2],
            ModeArg::Both => vec![ScoreMode::Mode1, ScoreMode::Mode2],
        }
    }
}

impl FormatArg {
    fn formats(self) -> Vec<TableFormat> {
        match self {
            FormatArg::Plain => vec![TableFormat::Plain],
            FormatArg::Markdown => vec![TableFormat::Markdown],
            FormatArg::Csv => vec![TableFormat::Csv],
            FormatArg::Json => vec![TableFormat::Json],
            FormatArg::All => TableFormat::ALL.to_vec(),
        }
    }
}

fn apply_common(opts: &mut RunOptions, c: CommonArgs) -> PathBuf {
    opts.models = c.models;
    opts.max_dim = c.max_dim;
    opts.stride = c.stride;
    opts.jobs = c.jobs;
    opts.cache_dir = c.cache_dir;
    opts.out_dir = c.out;
    c.manifest
}

fn apply_score(opts: &mut RunOptions, s: ScoreArgs) {
    opts.metrics = s.metric.map(|m| m.0);
    opts.modes = s.mode.modes();
    opts.num_pairs = s.pairs;
    opts.seed = s.seed;
    opts.reference = s.reference;
    opts.include_self = s.include_self;
}

fn plan(manifest: &std::path::Path, opts: &RunOptions) -> Result<Plan, PipelineError> {
    let m = load_manifest(manifest)?;
    Plan::new(m, opts)
}

fn execute(command: Command) -> Result<Outcome, PipelineError> {
    let mut opts = RunOptions::default();
    match command {
        Command::Extract { common } => {
            let manifest = apply_common(&mut opts, common);
            pipeline::cmd_extract(&plan(&manifest, &opts)?)
        }
        Command::Score { common, score } => {
            let manifest = apply_common(&mut opts, common);
            apply_score(&mut opts, score);
            pipeline::cmd_score(&plan(&manifest, &opts)?).map(|(o, _)| o)
        }
        Command::Report { target, report } => {
            opts.out_dir = target.out;
            opts.formats = report.format.formats();
            let p = plan(&target.manifest, &opts)?;
            pipeline::cmd_report(&p, &p.out_dir.join(SCORE_FILE))
        }
        Command::Run { common, score, report } => {
            let manifest = apply_common(&mut opts, common);
            apply_score(&mut opts, score);
            opts.formats = report.format.formats();
            pipeline::cmd_run(&plan(&manifest, &opts)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(outcome) => {
            outcome.summary.log();
            for p in &outcome.written {
                log::info!("wrote {}", p.display());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(1)
        }
    }
}
