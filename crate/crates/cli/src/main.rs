mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use laneperf::harness::Method;
use laneperf::Role;

#[derive(Debug, Parser)]
#[command(name = "laneperf", version, about = "Estimate lane detection F1 without labels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ground-truth precision, recall and F1 per mini-dataset.
    Eval(EvalArgs),
    /// Fit every requested method on the source validation segments.
    Calibrate(CalibrateArgs),
    /// Estimated F1 per target mini-dataset from calibrated artifacts.
    Estimate(EstimateArgs),
    /// Score every method against ground truth on the target segments.
    Benchmark(BenchmarkArgs),
    /// Generate a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Compare LanePerf gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbedderKind {
    /// Embeddings stored with each record.
    Precomputed,
    /// Thumbnail and color histogram computed from the frame image.
    Builtin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    SourceTrainRef,
    SourceVal,
    Target,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Role {
        match r {
            RoleArg::SourceTrainRef => Role::SourceTrainRef,
            RoleArg::SourceVal => Role::SourceVal,
            RoleArg::Target => Role::Target,
        }
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Overrides the manifest's mini-dataset size.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub minidataset_size: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Only these segment ids (repeatable).
    #[arg(long = "segment")]
    pub segments: Vec<String>,
    /// Only segments with this role.
    #[arg(long, value_enum)]
    pub role: Option<RoleArg>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub select: SelectArgs,
    /// Also write the table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Methods to fit (repeatable); all when omitted.
    #[arg(long = "method")]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for the artifact files.
    #[arg(long, alias = "artifacts-dir")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "precomputed")]
    pub embedder: EmbedderKind,
    /// LanePerf training settings as JSON; unspecified fields keep defaults.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    /// Overrides the number of LanePerf training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub select: SelectArgs,
    #[arg(long = "method")]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub artifacts_dir: PathBuf,
    #[arg(long, value_enum, default_value = "precomputed")]
    pub embedder: EmbedderKind,
    /// Also write the estimates as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long = "method")]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub artifacts_dir: PathBuf,
    #[arg(long, value_enum, default_value = "precomputed")]
    pub embedder: EmbedderKind,
    /// Directory for the report files.
    #[arg(long)]
    pub out: PathBuf,
    /// Recorded in the report.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; receives manifest.json and the segment records.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Generator settings as JSON; unspecified fields keep defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub minidataset_size: Option<u64>,
    /// Skip rendering frame images.
    #[arg(long)]
    pub no_images: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Perturbs the analytic gradients; the check must then fail.
    #[arg(long, hide = true)]
    pub corrupt_analytic: bool,
}

/// Exit statuses.
pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_PARTIAL: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match commands::run(cli.command) {
        Ok(status) => ExitCode::from(status),
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(commands::Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
