use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use qdarray_tune::Norm;

use crate::config::{DatasetChoice, ProviderChoice, SimMode};

#[derive(Debug, Parser)]
#[command(name = "qdarray", version, about = "Quantum-dot array simulator, state networks and auto-tuner")]
pub struct Cli {
    /// TOML run configuration; flags override its fields.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: number of processors).
    #[arg(long, global = true, env = "QDARRAY_THREADS")]
    pub threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a gate sweep or a two-gate map.
    Simulate(SimulateArgs),
    /// Generate a sweep, map or sub-map dataset.
    GenDataset(GenDatasetArgs),
    /// Train the network matching a dataset's kind.
    Train(TrainArgs),
    /// Score saved weights on a dataset.
    Eval(EvalArgs),
    /// Run the auto-tuner.
    Tune(TuneArgs),
    /// Render a dataset record or stack slice as PGM and CSV.
    Export(ExportArgs),
}

/// Sweep and map geometry overrides.
#[derive(Debug, Args, Default)]
pub struct GeometryArgs {
    /// Swept gate index.
    #[arg(long)]
    pub gate: Option<usize>,
    /// Sweep range in mV, `lo,hi`.
    #[arg(long, value_parser = parse_pair::<f64>, allow_hyphen_values = true)]
    pub range: Option<(f64, f64)>,
    #[arg(long)]
    pub points: Option<usize>,
    /// Map gates, `x,y`.
    #[arg(long, value_parser = parse_pair::<usize>)]
    pub gates: Option<(usize, usize)>,
    #[arg(long, value_parser = parse_pair::<f64>, allow_hyphen_values = true)]
    pub x_range: Option<(f64, f64)>,
    #[arg(long, value_parser = parse_pair::<f64>, allow_hyphen_values = true)]
    pub y_range: Option<(f64, f64)>,
    /// Map resolution, `columns,rows`.
    #[arg(long, value_parser = parse_pair::<usize>)]
    pub resolution: Option<(usize, usize)>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Preset (three-gate, five-gate) or device file.
    #[arg(long)]
    pub device: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<SimMode>,
    #[command(flatten)]
    pub geometry: GeometryArgs,
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[arg(long, value_enum)]
    pub kind: Option<DatasetChoice>,
    #[arg(long)]
    pub device: Option<String>,
    /// Number of sampled devices.
    #[arg(long)]
    pub count: Option<usize>,
    /// Relative standard deviation of sampled device parameters.
    #[arg(long)]
    pub rel_sigma: Option<f64>,
    /// Map dataset to cut sub-maps from.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Sub-map edge length in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Number of sub-maps.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Gate stepped between stack slices.
    #[arg(long)]
    pub slice_gate: Option<usize>,
    /// Stack slice voltages, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub slice_values: Option<Vec<f64>>,
    /// CSV matrices or one binary array to import as a stack.
    #[arg(long, value_delimiter = ',')]
    pub import: Option<Vec<PathBuf>>,
    /// Axis metadata (JSON) for imported stacks.
    #[arg(long)]
    pub axes: Option<PathBuf>,
    #[command(flatten)]
    pub geometry: GeometryArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Hidden widths of the per-pixel network, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Trained state-CNN weights.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub provider: Option<ProviderChoice>,
    #[arg(long)]
    pub device: Option<String>,
    /// Map stack directory for the stack provider.
    #[arg(long)]
    pub stack: Option<PathBuf>,
    /// Start center, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub start: Option<Vec<f64>>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Target probabilities (SC, Barrier, SD, DD), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub target: Option<Vec<f64>>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub delta_stop: Option<f64>,
    #[arg(long, value_enum)]
    pub norm: Option<NormArg>,
    #[command(flatten)]
    pub geometry: GeometryArgs,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum NormArg {
    L1,
    L2,
    Max,
}

impl From<NormArg> for Norm {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::L1 => Norm::L1,
            NormArg::L2 => Norm::L2,
            NormArg::Max => Norm::Max,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Dataset or stack directory.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<usize>,
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> Result<(T, T), String>
where
    T::Err: std::fmt::Display,
{
    let (a, b) = s
        .split_once(',')
        .or_else(|| s.split_once(':'))
        .ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<T>().map_err(|e| format!("`{v}`: {e}"));
    Ok((p(a)?, p(b)?))
}
