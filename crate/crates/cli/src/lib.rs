//! Command-line front-end for the leaftile toolkit.
//!
//! Every subcommand reads its inputs from the corpus root or from artifacts
//! that earlier stages left in the output root, and `pipeline` chains them
//! in memory. Exit codes: 0 success, 1 usage, 2 data, 3 internal.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use leaftile::dataset::Split;
use leaftile::tiler::{DiscardRule, EdgePolicy, NegativePolicy};
use leaftile::width::WidthPolicy;

use crate::config::{parse_n_list, PipelineConfig, CONFIG_ENV};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: leaftile::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core { source, .. } if source.is_internal() => 3,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            1 => "usage",
            3 => "internal",
            _ => "data",
        }
    }

    /// `error[<kind>]: <message>` on one line.
    pub fn line(&self) -> String {
        let msg: String = self.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error[{}]: {msg}", self.kind())
    }
}

/// Attach a location to a core error.
pub(crate) fn at(context: impl std::fmt::Display) -> impl FnOnce(leaftile::Error) -> CliError {
    let context = context.to_string();
    move |source| CliError::Core { context, source }
}

#[derive(Debug, Parser)]
#[command(
    name = "leaftile",
    version,
    about = "Leaf-width adaptive tiling for detection corpora"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug)]
pub struct NList(pub Vec<u32>);

#[derive(Clone, Debug)]
pub struct NamedPath {
    pub name: String,
    pub path: PathBuf,
}

fn parse_named(s: &str) -> Result<NamedPath, String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok(NamedPath {
            name: name.to_string(),
            path: path.into(),
        }),
        Some(_) => Err(format!("expected NAME=PATH, got {s:?}")),
        None => {
            let path = PathBuf::from(s);
            let name = path
                .file_stem()
                .map(|n| n.to_string_lossy().into_owned())
                .ok_or_else(|| format!("no file name in {s:?}"))?;
            Ok(NamedPath { name, path })
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EdgeArg {
    ClampShift,
    PadReflect,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum NegativesArg {
    AnnotatedOnly,
    KeepNegatives,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DiscardArg {
    Box,
    Tile,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PolicyArg {
    GroundTruthFirst,
    PredictionFirst,
    PredictionOnly,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML config file.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Directory holding annotations and images.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Annotation glob relative to the corpus root.
    #[arg(long = "glob", global = true)]
    pub annotation_glob: Option<String>,
    #[arg(long, short = 'o', global = true)]
    pub out: Option<PathBuf>,
    /// Window coefficients, e.g. `3,5,7`.
    #[arg(long = "n", global = true, value_parser = |s: &str| parse_n_list(s).map(NList))]
    pub n_values: Option<NList>,
    #[arg(long, global = true)]
    pub overlap: Option<f64>,
    #[arg(long, global = true)]
    pub min_area_ratio: Option<f64>,
    #[arg(long, global = true)]
    pub min_window: Option<u32>,
    #[arg(long, global = true)]
    pub edge_policy: Option<EdgeArg>,
    #[arg(long, global = true)]
    pub negatives: Option<NegativesArg>,
    #[arg(long, global = true)]
    pub discard: Option<DiscardArg>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub width_policy: Option<PolicyArg>,
    /// Sidecar file of predicted widths.
    #[arg(long, global = true)]
    pub predictions: Option<PathBuf>,
    /// Write labels and lists only.
    #[arg(long, global = true)]
    pub no_images: bool,
    /// Worker threads.
    #[arg(long, short = 'j', global = true)]
    pub jobs: Option<usize>,
    /// Print the work plan and write nothing.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[arg(long, short = 'v', global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[arg(long, short = 'q', global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse annotation files into records.jsonl.
    Ingest,
    /// Ground-truth leaf widths into widths.csv.
    Widths,
    /// Score sidecar predictions against ground-truth widths.
    EvalMape,
    /// Narrow / normal / wide assignment.
    Partition,
    /// Width distribution statistics.
    Stats,
    /// Tiled dataset trees, one per N.
    Tile,
    /// Untiled dataset tree.
    Emit,
    /// Per-class AP and mAP for one or more detection files.
    EvalMap(EvalMapArgs),
    /// Map tile detections back to source images and merge them.
    Merge(MergeArgs),
    /// ingest, widths, eval-mape, stats, partition, emit, tile.
    Pipeline,
}

#[derive(Debug, Args)]
pub struct EvalMapArgs {
    /// `NAME=PATH`; repeat to fill several table columns.
    #[arg(long = "detections", required = true, value_parser = parse_named)]
    pub detections: Vec<NamedPath>,
    /// Ground-truth records; defaults to the ingested records.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Restrict ground truth to one split of the original corpus.
    #[arg(long)]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub iou: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// tiles.csv of a tiled tree.
    #[arg(long)]
    pub tiles: PathBuf,
    /// Detections whose image ids are tile ids.
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub iou: Option<f64>,
}

/// Config file first, then flags.
pub fn resolve_config(g: &GlobalArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &g.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = &g.corpus {
        cfg.corpus_root = v.clone();
    }
    if let Some(v) = &g.annotation_glob {
        cfg.annotation_glob = v.clone();
    }
    if let Some(v) = &g.out {
        cfg.output_root = v.clone();
    }
    if let Some(v) = &g.n_values {
        cfg.n_values = v.0.clone();
    }
    if let Some(v) = g.overlap {
        cfg.overlap_fraction = v;
    }
    if let Some(v) = g.min_area_ratio {
        cfg.min_area_ratio = v;
    }
    if let Some(v) = g.min_window {
        cfg.min_window = v;
    }
    if let Some(v) = g.edge_policy {
        cfg.edge_policy = match v {
            EdgeArg::ClampShift => EdgePolicy::ClampShift,
            EdgeArg::PadReflect => EdgePolicy::PadReflect,
        };
    }
    if let Some(v) = g.negatives {
        cfg.negatives = match v {
            NegativesArg::AnnotatedOnly => NegativePolicy::AnnotatedOnly,
            NegativesArg::KeepNegatives => NegativePolicy::KeepNegatives,
        };
    }
    if let Some(v) = g.discard {
        cfg.discard = match v {
            DiscardArg::Box => DiscardRule::Box,
            DiscardArg::Tile => DiscardRule::Tile,
        };
    }
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = g.width_policy {
        cfg.width_policy = match v {
            PolicyArg::GroundTruthFirst => WidthPolicy::GroundTruthFirst,
            PolicyArg::PredictionFirst => WidthPolicy::PredictionFirst,
            PolicyArg::PredictionOnly => WidthPolicy::PredictionOnly,
        };
    }
    if let Some(v) = &g.predictions {
        cfg.predictions = Some(v.clone());
    }
    if g.no_images {
        cfg.write_images = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.global)?;
    let ctx = commands::Ctx {
        cfg,
        dry_run: cli.global.dry_run,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Ingest => commands::ingest(&ctx).map(drop),
        Command::Widths => commands::run_widths(&ctx),
        Command::EvalMape => commands::run_eval_mape(&ctx),
        Command::Partition => commands::run_partition(&ctx),
        Command::Stats => commands::run_stats(&ctx),
        Command::Tile => commands::run_tile(&ctx),
        Command::Emit => commands::run_emit(&ctx),
        Command::EvalMap(args) => commands::eval_map(
            &ctx,
            &args.detections,
            args.gt.as_deref(),
            args.split.map(|s| match s {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
                SplitArg::Test => Split::Test,
            }),
            args.iou,
        ),
        Command::Merge(args) => commands::merge(&ctx, &args.tiles, &args.detections, args.output.as_deref(), args.iou),
        Command::Pipeline => commands::pipeline(&ctx),
    })
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("LEAFTILE_LOG")
        .format(|buf, record| writeln!(buf, "{} {}", record.level(), record.args()))
        .try_init();
}

/// Parse `args`, run, and map the outcome to an exit code. Failures print
/// a single `error[<kind>]: ...` line on stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).line());
            return ExitCode::from(1);
        }
    };
    init_logging(cli.global.verbose, cli.global.quiet);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code())
        }
    }
}
