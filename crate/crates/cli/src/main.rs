//! `uavloc`: synthetic data, both localizers and the evaluation report from
//! one executable.

mod commands;
mod data;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use uavloc_core::config::Preset;
use uavloc_core::eval::DEFAULT_MAX_DT;

/// UAV localization in LiDAR point clouds.
///
/// Every flag can also be set through an environment variable named after
/// it with a `UAVLOC_` prefix, e.g. `UAVLOC_SEED=3` or `UAVLOC_GRID_CONFIG=grid.toml`.
#[derive(Debug, Parser)]
#[command(name = "uavloc", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Built-in defaults that config files override.
    #[arg(long, global = true, env = "UAVLOC_PRESET", default_value = "desk", value_parser = parse_preset)]
    pub preset: Preset,
    /// Seed for every random choice; recorded in all outputs.
    #[arg(long, global = true, env = "UAVLOC_SEED")]
    pub seed: Option<u64>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: uavloc_core::config::ConfigError| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic flight dataset.
    Synth(SynthArgs),
    /// Localize with range-shell clustering and shape heuristics.
    Cluster(ClusterArgs),
    /// Write the pillar tensor of every scan.
    Encode(EncodeArgs),
    /// Train the detector.
    Train(TrainArgs),
    /// Localize with a trained detector.
    Detect(DetectArgs),
    /// Score estimate files against the truth trajectory.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene spec TOML, merged over the preset scene.
    #[arg(long, env = "UAVLOC_SPEC")]
    pub spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "UAVLOC_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long, env = "UAVLOC_MANIFEST")]
    pub manifest: PathBuf,
    /// Range series CSV.
    #[arg(long, env = "UAVLOC_RANGE")]
    pub range: PathBuf,
    /// Clustering config TOML, merged over the preset.
    #[arg(long, env = "UAVLOC_CLUSTER_CONFIG")]
    pub cluster_config: Option<PathBuf>,
    /// Reject estimates implying a speed above the configured maximum.
    #[arg(long, env = "UAVLOC_VELOCITY_GATE")]
    pub velocity_gate: bool,
    /// Largest scan-to-range time difference accepted, seconds.
    #[arg(long, env = "UAVLOC_RANGE_TOLERANCE", default_value_t = 0.05)]
    pub range_tolerance: f64,
    /// Estimates CSV.
    #[arg(long, env = "UAVLOC_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long, env = "UAVLOC_MANIFEST")]
    pub manifest: PathBuf,
    #[arg(long, env = "UAVLOC_GRID_CONFIG")]
    pub grid_config: Option<PathBuf>,
    /// Output directory for one `.pptd` file per scan.
    #[arg(long, env = "UAVLOC_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = "UAVLOC_MANIFEST")]
    pub manifest: PathBuf,
    /// Label CSV with one cuboid per annotated scan.
    #[arg(long, env = "UAVLOC_LABELS")]
    pub labels: PathBuf,
    #[arg(long, env = "UAVLOC_GRID_CONFIG")]
    pub grid_config: Option<PathBuf>,
    #[arg(long, env = "UAVLOC_NET_CONFIG")]
    pub net_config: Option<PathBuf>,
    #[arg(long, env = "UAVLOC_TRAIN_CONFIG")]
    pub train_config: Option<PathBuf>,
    /// Overrides the training config's epoch count.
    #[arg(long, env = "UAVLOC_EPOCHS")]
    pub epochs: Option<usize>,
    /// Weights file.
    #[arg(long, env = "UAVLOC_OUT")]
    pub out: PathBuf,
    /// Per-epoch loss CSV; defaults to the weights path with `.loss.csv`.
    #[arg(long, env = "UAVLOC_LOSS_TRACE")]
    pub loss_trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long, env = "UAVLOC_MANIFEST")]
    pub manifest: PathBuf,
    #[arg(long, env = "UAVLOC_WEIGHTS")]
    pub weights: PathBuf,
    /// Grid TOML; defaults to the grid stored with the weights.
    #[arg(long, env = "UAVLOC_GRID_CONFIG")]
    pub grid_config: Option<PathBuf>,
    /// Estimates CSV.
    #[arg(long, env = "UAVLOC_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZOffset {
    Fixed(f64),
    Fit,
}

impl FromStr for ZOffset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "fit" {
            return Ok(ZOffset::Fit);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(ZOffset::Fixed(v)),
            _ => Err(format!("expected meters or `fit`, got {s:?}")),
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Truth CSV, one row per evaluated scan.
    #[arg(long, env = "UAVLOC_TRUTH")]
    pub truth: PathBuf,
    /// Score only the truth samples of these scans.
    #[arg(long, env = "UAVLOC_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Estimate CSVs, one per method.
    #[arg(long, env = "UAVLOC_ESTIMATES", required = true, num_args = 1.., value_delimiter = ',')]
    pub estimates: Vec<PathBuf>,
    /// Constant z correction added to estimates, or `fit` to fit one per method.
    #[arg(long, env = "UAVLOC_Z_OFFSET")]
    pub z_offset: Option<ZOffset>,
    /// Alignment window, seconds.
    #[arg(long, env = "UAVLOC_MAX_DT", default_value_t = DEFAULT_MAX_DT)]
    pub max_dt: f64,
    /// Fail with exit code 5 when any method's 3D RMS exceeds this.
    #[arg(long, env = "UAVLOC_RMS_CEILING")]
    pub rms_ceiling: Option<f64>,
    /// Directory for report.csv and report.txt.
    #[arg(long, env = "UAVLOC_OUT")]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.quiet {
        log::LevelFilter::Error
    } else {
        match cli.global.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("UAVLOC_LOG")
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("uavloc: {e}");
            e.exit_code()
        }
    }
}
