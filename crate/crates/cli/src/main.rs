//! `semflow`: dense semantic correspondence pipeline.
//!
//! Subcommands: `stats` accumulates stationary statistics over a corpus,
//! `match` estimates a flow between two images, `eval` scores predictions
//! against multi-annotator keypoints, `plot` renders CDF curves.

mod commands;
mod config;
mod manifest;
mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration or inputs that fail validation (exit 2).
    #[error("{0}")]
    Config(String),
    /// Filesystem or decode failures (exit 3).
    #[error("{0}")]
    Io(String),
    /// Numeric failures such as factorization breakdown (exit 4).
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "semflow",
    version,
    about = "Dense semantic correspondence with per-pixel exemplar LDA classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Accumulate stationary feature statistics over an image corpus
    Stats(StatsArgs),
    /// Match a reference image to a target image and emit the flow
    Match(MatchArgs),
    /// Score flow files and baselines against keypoint annotations
    Eval(EvalArgs),
    /// Render a CDF CSV as an SVG plot
    Plot(PlotArgs),
}

/// Flags shared by every pipeline subcommand; CLI values override the config
/// file.
#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// TOML config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (outputs are identical for any value)
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Working-resolution bound, e.g. 150
    #[arg(long)]
    max_dim: Option<usize>,
    /// Detector geometry, e.g. 5x5
    #[arg(long)]
    detector: Option<String>,
    /// Statistics displacement bandwidth
    #[arg(long)]
    bandwidth: Option<usize>,
    /// Prior log-ratio added to classifier scores
    #[arg(long, allow_negative_numbers = true)]
    prior_mu: Option<f64>,
    /// Unary kind: lda or l1
    #[arg(long)]
    unary: Option<String>,
    /// Covariance factorization: cholesky or inverse
    #[arg(long)]
    factor: Option<String>,
    /// Smoothness weight of the flow objective
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// Pyramid depth (0 = automatic)
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    window_radius: Option<usize>,
    #[arg(long)]
    bp_iters: Option<usize>,
}

impl CommonArgs {
    fn overrides(&self) -> config::Overrides {
        config::Overrides {
            max_dim: self.max_dim,
            detector: self.detector.clone(),
            bandwidth: self.bandwidth,
            prior_mu: self.prior_mu,
            unary: self.unary.clone(),
            factor: self.factor.clone(),
            seed: self.seed,
            lambda: self.lambda,
            levels: self.levels,
            window_radius: self.window_radius,
            bp_iters: self.bp_iters,
        }
    }

    fn load_config(&self) -> Result<config::RunConfig, CliError> {
        if let Some(jobs) = self.jobs {
            if jobs == 0 {
                return Err(CliError::Config("jobs: must be at least 1".into()));
            }
            // Ignore AlreadyInitialized: tests may drive several commands in
            // one process.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
        }
        config::RunConfig::load(self.config.as_deref(), &self.overrides())
    }
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory of corpus images (PNG/JPEG/PGM)
    #[arg(long)]
    corpus: PathBuf,
    /// Output .scov file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MatchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Statistics file (required for --unary lda)
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Reference image
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Target image
    #[arg(long)]
    tgt: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Reference points for posterior-map PGM dumps, as "r,c;r,c;..."
    #[arg(long)]
    points: Option<String>,
    /// Also dump both feature maps as .sfea files
    #[arg(long)]
    dump_features: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Annotation JSON file
    #[arg(long)]
    annotations: PathBuf,
    /// Prediction source, repeatable: NAME=PATH(.sflo file or directory of
    /// pair_<i>.sflo), NAME=baseline:identity, or NAME=baseline:argmax
    #[arg(long = "flow", value_name = "NAME=SPEC", required = true)]
    flows: Vec<String>,
    /// Statistics file (needed by baseline:argmax with the lda unary)
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    /// Optional SVG plot path
    #[arg(long)]
    svg: Option<PathBuf>,
    /// CDF truncation threshold in standard deviations
    #[arg(long, default_value_t = 3.0)]
    max_sd: f64,
    /// Number of CDF thresholds
    #[arg(long, default_value_t = 30)]
    bins: usize,
}

#[derive(Args)]
struct PlotArgs {
    /// CDF CSV produced by `semflow eval`
    #[arg(long)]
    csv: PathBuf,
    /// Output SVG path
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Stats(args) => commands::stats::run(args),
        Cmd::Match(args) => commands::match_cmd::run(args),
        Cmd::Eval(args) => commands::eval_cmd::run(args),
        Cmd::Plot(args) => commands::plot::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
