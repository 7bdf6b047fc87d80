mod output;
mod run;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use excursets::families::Direction;
use excursets::posterior_methods::PosteriorMethod;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_ACCEPTANCE: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "excursets", version, about = "Excursion sets and contour uncertainty regions for latent Gaussian models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Excursion function and excursion set above or below a level.
    Excursion(RunArgs),
    /// Level avoiding sets, contour function and contour uncertainty region.
    Contour(RunArgs),
    /// Coverage and comparison experiments on simulated data.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Pos,
    Neg,
    Avoid,
    Contour,
}

impl DirectionArg {
    pub fn direction(self) -> Direction {
        match self {
            DirectionArg::Pos => Direction::Positive,
            DirectionArg::Neg => Direction::Negative,
            DirectionArg::Avoid => Direction::Avoid,
            DirectionArg::Contour => Direction::Contour,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    One,
    TwoLevel,
    TwoSmooth,
    Avoid1,
    Avoid2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Eb,
    Qc,
    Ni,
}

impl MethodArg {
    pub fn method(self) -> PosteriorMethod {
        match self {
            MethodArg::Eb => PosteriorMethod::Eb,
            MethodArg::Qc => PosteriorMethod::Qc,
            MethodArg::Ni => PosteriorMethod::Ni,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Posterior precision, Matrix Market (coordinate, symmetric).
    #[arg(long, conflicts_with_all = ["covariance", "configs"])]
    pub precision: Option<PathBuf>,
    /// Posterior covariance, Matrix Market (coordinate).
    #[arg(long, conflicts_with = "configs")]
    pub covariance: Option<PathBuf>,
    /// Posterior mean, one value per line.
    #[arg(long)]
    pub mean: Option<PathBuf>,
    /// JSON list of weighted hyperparameter configurations.
    #[arg(long)]
    pub configs: Option<PathBuf>,
    /// Node coordinates (CSV, one node per row), for the smoothing family.
    #[arg(long)]
    pub coords: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub level: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum)]
    pub direction: Option<DirectionArg>,
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    #[arg(long, value_enum, default_value_t = MethodArg::Eb)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 10_000)]
    pub particles: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Skip the high-particle re-run near the stopping point.
    #[arg(long)]
    pub no_refine: bool,
    /// Record wall time in the summary (makes it run-dependent).
    #[arg(long)]
    pub timing: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct VerifyArgs {
    /// ex1, ex2 or ex3.
    pub example: String,
    /// Grid points (ex1) or lattice side (ex2, ex3).
    #[arg(long)]
    pub scale: Option<usize>,
    /// Comma-separated posterior methods (ex3).
    #[arg(long, value_delimiter = ',', value_enum, default_values_t = [MethodArg::Eb, MethodArg::Qc, MethodArg::Ni])]
    pub methods: Vec<MethodArg>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub particles: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Excursion(args) => run::excursion(&args, false),
        Command::Contour(args) => run::excursion(&args, true),
        Command::Verify(args) => verify::verify(&args),
    };
    ExitCode::from(code)
}
