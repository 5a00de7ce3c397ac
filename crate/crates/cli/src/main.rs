//! `cellgraph`: synthetic data, feature extraction, graph building,
//! training, evaluation and ablation sweeps from one executable.

mod cache;
mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "cellgraph", version, about = "Cell-graph tissue grading pipeline")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Log verbosity: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Label mask (PGM) plus color image (PPM) to a feature table.
    ExtractFeatures(ExtractArgs),
    /// Generate a labeled synthetic dataset directory.
    Synth(SynthArgs),
    /// Feature tables to graph files.
    BuildGraph(BuildGraphArgs),
    /// Cross-validated training on a dataset directory.
    Train(TrainArgs),
    /// Accuracy of checkpoints on graph files.
    Evaluate(EvaluateArgs),
    /// Cross-validation over an ablation grid.
    Ablate(AblateArgs),
    /// Text summary of a graph file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Instance label mask (binary PGM, 8 or 16 bit).
    #[arg(long)]
    pub mask: PathBuf,
    /// Color image (binary PPM) of the same size.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Grade label recorded in the table.
    #[arg(long)]
    pub label: Option<u8>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of images; grades cycle 0, 1, 2.
    #[arg(long, default_value_t = 39)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Skip writing mask and color images.
    #[arg(long)]
    pub no_masks: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Text,
    Binary,
}

#[derive(Args, Debug, Clone)]
pub struct AugmentFlags {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Boxes per axis of the distribution grid.
    #[arg(long)]
    pub grid_d: Option<usize>,
    /// Node budget M per image.
    #[arg(long)]
    pub nodes: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BuildGraphArgs {
    /// Feature table, or a directory of `.csv` tables.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub augment: AugmentFlags,
    /// Also write the four quadrant patches of every graph.
    #[arg(long)]
    pub patched: bool,
    #[arg(long, value_enum, default_value = "binary")]
    pub format: FormatArg,
    /// Keep only the leading features.
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Graph cache directory.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigFlags {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub patched: Option<bool>,
    /// Keep each patient's images in one fold. Needs patient ids, which
    /// feature tables do not carry, so it is rejected.
    #[arg(long)]
    pub group_by_patient: bool,
    #[command(flatten)]
    pub augment: AugmentFlags,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory (`features/*.csv`, or tables at the top level).
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub config: ConfigFlags,
    /// Run directory for checkpoints, metrics and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Graph cache directory (default: `<data>/graph-cache`).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Checkpoint file; repeatable.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    /// Graph files or directories of them; quadrant patch files are skipped.
    #[arg(long, required = true)]
    pub graphs: Vec<PathBuf>,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// patching, feature-dim or graph-size.
    pub kind: String,
    #[arg(long)]
    pub data: PathBuf,
    /// Grid values: node budgets, or feature widths for feature-dim.
    #[arg(long, value_delimiter = ',', alias = "dims")]
    pub values: Vec<usize>,
    #[command(flatten)]
    pub config: ConfigFlags,
    /// Sweep CSV path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    pub graph: PathBuf,
    /// Histogram bins.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error::exit_code(&e) as u8)
        }
    }
}
