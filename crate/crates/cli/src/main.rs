mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pccnmf", version, about = "NMF with common-cause diagnostics for image datasets")]
pub struct Cli {
    /// Default seed for commands that take one.
    #[arg(long, global = true, env = "PCCNMF_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for independent factorizations.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    /// Record wall-clock start and end times in the report.
    #[arg(long, global = true)]
    pub timestamps: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the 169x256 Swimmer dataset as CSV plus sidecar.
    SwimmerGen {
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Apply flip noise or binarization to a dataset.
    Perturb(PerturbArgs),
    /// Factorize a dataset at a single rank.
    Factorize(FactorizeArgs),
    /// Scan ranks and estimate the critical rank.
    RankScan(RankScanArgs),
    /// Match the bases of two related factorizations.
    Stability(StabilityArgs),
    /// Error anticorrelation, entropies and sparsity of a factorization.
    Analyze(AnalyzeArgs),
    /// Group images under the bases that explain them.
    Cluster(ClusterArgs),
    /// Find the denoising rank range and compare accuracy with the SVD.
    Denoise(DenoiseArgs),
    /// Bundle several run reports into one file.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InputFormat {
    Csv,
    PgmDir,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// CSV matrix (one row per pixel) or directory of PGM images.
    #[arg(short, long)]
    pub input: PathBuf,

    #[arg(long, value_enum, default_value_t = InputFormat::Csv)]
    pub format: InputFormat,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value = "frobenius")]
    pub loss: pccnmf::Loss,

    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,

    /// Relative loss change below which iteration stops.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[arg(short, long)]
    pub output: PathBuf,

    /// Flip probability per pixel.
    #[arg(long, conflicts_with = "binarize", required_unless_present = "binarize")]
    pub xi: Option<f64>,

    /// Threshold at 0.5 instead of adding noise.
    #[arg(long)]
    pub binarize: bool,
}

#[derive(Debug, Args)]
pub struct FactorizeArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[arg(long)]
    pub rank: usize,

    #[command(flatten)]
    pub solver: SolverArgs,

    /// Directory for B.csv, W.csv, meta.json and report.json.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct RankScanArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[arg(long)]
    pub r_min: usize,

    #[arg(long)]
    pub r_max: usize,

    /// Tolerated share of invalid pixel-image pairs.
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,

    /// Number of seeds, counted up from the global seed.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,

    /// Test image-given-pixel instead of pixel-given-image inequalities.
    #[arg(long)]
    pub dual: bool,

    #[command(flatten)]
    pub solver: SolverArgs,

    /// Directory for report.json and curves.csv; the report goes to stdout otherwise.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    NoiseSplit,
    SeedPair,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[arg(long, value_enum)]
    pub mode: Mode,

    #[arg(long)]
    pub rank: usize,

    #[arg(long, default_value_t = 0.0)]
    pub xi: f64,

    /// Factorization seed (both halves in split mode); defaults to the global seed.
    #[arg(long)]
    pub seed_a: Option<u64>,

    /// Second factorization seed, or the noise seed in split mode; defaults to the global seed plus one.
    #[arg(long)]
    pub seed_b: Option<u64>,

    #[command(flatten)]
    pub solver: SolverArgs,

    /// Directory for report.json and histogram.csv; the report goes to stdout otherwise.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Directory written by `factorize`.
    #[arg(long)]
    pub factorization: PathBuf,

    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[arg(long)]
    pub factorization: PathBuf,

    #[arg(long, default_value_t = 5)]
    pub k: usize,

    /// Keep only images with p(i|b) > p(i).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub require_positive: bool,

    /// Directory for PGM strips; needs the image shape.
    #[arg(long)]
    pub montage: Option<PathBuf>,

    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Baseline {
    None,
    Svd,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    /// Clean images.
    #[command(flatten)]
    pub input: InputArgs,

    /// Corrupted images; generated from the clean ones with --xi otherwise.
    #[arg(long, conflicts_with = "xi", required_unless_present = "xi")]
    pub noisy: Option<PathBuf>,

    #[arg(long)]
    pub xi: Option<f64>,

    /// Noise seed; defaults to the global seed.
    #[arg(long)]
    pub noise_seed: Option<u64>,

    #[arg(long, default_value_t = 1)]
    pub r_lo: usize,

    #[arg(long)]
    pub r_hi: usize,

    #[arg(long, default_value_t = 2)]
    pub exclusions: usize,

    #[arg(long, value_enum, default_value_t = Baseline::Svd)]
    pub baseline: Baseline,

    #[arg(long, default_value_t = 10)]
    pub seeds: u64,

    #[command(flatten)]
    pub solver: SolverArgs,

    /// Directory for report.json and denoise.csv; the report goes to stdout otherwise.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run reports to bundle.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,

    /// Bundle JSON; an index CSV is written next to it.
    #[arg(short, long)]
    pub output: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let body = serde_json::json!({
                "error": {
                    "kind": commands::error_kind(&err),
                    "message": format!("{err:#}"),
                }
            });
            eprintln!("{body}");
            ExitCode::from(1)
        }
    }
}
