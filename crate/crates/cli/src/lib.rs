//! Command-line front end: argument definitions, exit-code mapping and
//! subcommand dispatch. `main.rs` only parses and reports.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lesionseg::Connectivity;

mod commands;
pub mod layout;

pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// A failed command with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }

    pub fn code(&self) -> i32 {
        self.code
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<lesionseg::Error> for CliError {
    fn from(e: lesionseg::Error) -> Self {
        match e {
            lesionseg::Error::Nifti { .. } | lesionseg::Error::Io { .. } => Self::io(e.to_string()),
            other => Self::usage(other.to_string()),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "lesionseg",
    version,
    about = "PET/CT lesion segmentation toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score predictions against ground truth (Dice, FP and FN volume).
    Eval(EvalArgs),
    /// Evaluate a range of minimum component sizes.
    Sweep(SweepArgs),
    /// Remove small connected components from one mask.
    Postproc(PostprocArgs),
    /// Resample CT onto the PET grid and normalize both channels.
    Preprocess(PreprocessArgs),
    /// Connected-component table and size histogram for one mask.
    Stats(StatsArgs),
    /// Generate synthetic PET/CT cases with known lesions.
    Phantom(PhantomArgs),
    /// Draw one seeded training batch of patches from a case.
    Sample(SampleArgs),
}

#[derive(Debug, Args)]
pub struct JobsArg {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of `<case>/pred.nii.gz`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of `<case>/gt.nii.gz`.
    #[arg(long)]
    pub gt: PathBuf,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// Neighborhood: 6, 18 or 26.
    #[arg(long, default_value_t = Connectivity::TwentySix, value_parser = parse_connectivity)]
    pub connectivity: Connectivity,
    /// Remove predicted components smaller than this many voxels.
    #[arg(long, default_value_t = 0)]
    pub min_size: u64,
    /// Minimum component size in mL, rounded up to whole voxels per case.
    #[arg(long, conflicts_with = "min_size")]
    pub min_size_ml: Option<f64>,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Comma-separated voxel thresholds.
    #[arg(long, value_delimiter = ',', default_values_t = lesionseg::postproc::DEFAULT_SWEEP_THRESHOLDS)]
    pub thresholds: Vec<u64>,
    /// CSV output path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = Connectivity::TwentySix, value_parser = parse_connectivity)]
    pub connectivity: Connectivity,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Debug, Args)]
pub struct PostprocArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub min_size: u64,
    #[arg(long, conflicts_with = "min_size")]
    pub min_size_ml: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = Connectivity::TwentySix, value_parser = parse_connectivity)]
    pub connectivity: Connectivity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PetNormArg {
    PerVolume,
    Global,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Directory of `<case>/pet.nii.gz` and `<case>/ct.nii.gz`.
    #[arg(long)]
    pub cases: PathBuf,
    /// CT statistics JSON (read, or written with --compute-stats).
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Compute CT statistics over all cases first and save them to --stats.
    #[arg(long)]
    pub compute_stats: bool,
    #[arg(long, default_value_t = lesionseg::preproc::DEFAULT_CT_PERCENTILES.0)]
    pub percentile_lo: f64,
    #[arg(long, default_value_t = lesionseg::preproc::DEFAULT_CT_PERCENTILES.1)]
    pub percentile_hi: f64,
    /// Sample every n-th CT voxel when computing statistics.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub stride: u64,
    #[arg(long, value_enum, default_value_t = PetNormArg::PerVolume)]
    pub pet_norm: PetNormArg,
    /// PET mean for --pet-norm global.
    #[arg(long, required_if_eq("pet_norm", "global"))]
    pub pet_mean: Option<f64>,
    /// PET standard deviation for --pet-norm global.
    #[arg(long, required_if_eq("pet_norm", "global"))]
    pub pet_std: Option<f64>,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub mask: PathBuf,
    /// Histogram CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Component CSV path; defaults to `<out stem>.components.csv`.
    #[arg(long)]
    pub components: Option<PathBuf>,
    /// Comma-separated bin edges in voxels.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BIN_EDGES)]
    pub bins: Vec<f64>,
    #[arg(long, default_value_t = Connectivity::TwentySix, value_parser = parse_connectivity)]
    pub connectivity: Connectivity,
}

pub const DEFAULT_BIN_EDGES: [f64; 8] = [1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6, 1e7];

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of cases; case `i` uses seed + i.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub cases: u64,
    #[arg(long, default_value_t = 3)]
    pub lesions: usize,
    /// Edge length of the cubic grid in voxels.
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub size: u64,
    #[arg(long, default_value_t = 2.0)]
    pub spacing: f64,
    #[arg(long, default_value_t = 3.0)]
    pub radius_min: f64,
    #[arg(long, default_value_t = 6.0)]
    pub radius_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub background: f64,
    #[arg(long, default_value_t = 8.0)]
    pub uptake: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Extra bright PET blobs that are not lesions.
    #[arg(long, default_value_t = 0)]
    pub distractors: usize,
    /// Also write a corrupted copy of the ground truth as pred.nii.gz.
    #[arg(long)]
    pub with_pred: bool,
    #[arg(long, default_value_t = 3)]
    pub spurious_blobs: usize,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_blob_voxels: u64,
    #[arg(long, default_value_t = 0)]
    pub missed_lesions: usize,
    #[arg(long, default_value_t = 0.2)]
    pub dilation: f64,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Case directory with pet.nii.gz, optional ct.nii.gz and gt.nii.gz.
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Patch edge in voxels (`N`) or per axis (`X,Y,Z`).
    #[arg(long, value_delimiter = ',', num_args = 1..=3, default_values_t = [128usize])]
    pub patch_size: Vec<usize>,
    #[arg(long, default_value_t = lesionseg::sampler::DEFAULT_OVERSAMPLE_FRACTION)]
    pub oversample: f64,
    #[arg(long, default_value_t = lesionseg::sampler::DEFAULT_BATCH_SIZE)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_connectivity(s: &str) -> Result<Connectivity, String> {
    s.parse().map_err(|e: lesionseg::Error| e.to_string())
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Eval(args) => commands::eval(&args),
        Command::Sweep(args) => commands::sweep(&args),
        Command::Postproc(args) => commands::postproc(&args),
        Command::Preprocess(args) => commands::preprocess(&args),
        Command::Stats(args) => commands::stats(&args),
        Command::Phantom(args) => commands::phantom(&args),
        Command::Sample(args) => commands::sample(&args),
    }
}
