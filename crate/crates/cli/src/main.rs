//! `biopsy`: simulate, score, compare and plan 12-core biopsy sessions.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use biopsy_core::coverage::{DEFAULT_RADIUS_MM, DEFAULT_VOXEL_MM};
use biopsy_core::protocol::DEFAULT_CORE_LENGTH_MM;
use biopsy_core::Error;

#[derive(Parser, Debug)]
#[command(name = "biopsy", version, about = "Template-guided prostate biopsy evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a paired 2D/4D operator cohort and write a session file.
    Simulate(SimulateArgs),
    /// Score a session file: per-biopsy errors and per-session coverage.
    Evaluate(EvaluateArgs),
    /// Paired 2D/4D statistics for a session file.
    Compare(CompareArgs),
    /// Coverage-maximising core plan versus the default protocol.
    Plan(PlanArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Master seed; all randomness derives from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_VOXEL_MM)]
    pub voxel_mm: f64,
    /// Exploration cylinder radius.
    #[arg(long, default_value_t = DEFAULT_RADIUS_MM)]
    pub radius_mm: f64,
    /// Entry/target zone diameter. Overrides the zones stored in an input file.
    #[arg(long)]
    pub zone_diameter_mm: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_CORE_LENGTH_MM)]
    pub core_length_mm: f64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 14)]
    pub operators: u32,
    /// Tip noise per axis for 2D guidance (default: calibrated to the 2D mean target error).
    #[arg(long, allow_hyphen_values = true)]
    pub sigma_2d_tip: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub sigma_4d_tip: Option<f64>,
    /// Entry aim noise per axis for 2D guidance (default: calibrated to the 2D mean entry error).
    #[arg(long, allow_hyphen_values = true)]
    pub sigma_2d_entry: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub sigma_4d_entry: Option<f64>,
    /// Exclude this fraction of biopsy pairs from paired analyses.
    #[arg(long, num_args = 0..=1, default_missing_value = "0.125", allow_hyphen_values = true)]
    pub dropout: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    pub file: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
    /// Also write PGM coverage slices and a voxel CSV per session.
    #[arg(long)]
    pub pgm: bool,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    pub file: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerArg {
    Greedy,
    Anneal,
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 12)]
    pub cores: usize,
    /// Candidate lattice spacing, 1 to 10 mm.
    #[arg(long, default_value_t = 3.0)]
    pub spacing_mm: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Greedy)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 200)]
    pub anneal_steps: usize,
    /// Also write PGM coverage slices for the plan.
    #[arg(long)]
    pub pgm: bool,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::Config(_)
            | Error::Validation(_)
            | Error::Parse(_)
            | Error::Pairing(_)
            | Error::ProtocolInvalid(_)
            | Error::Precondition(_)
            | Error::InvalidGeometry(_)
            | Error::InvalidDegreesOfFreedom(_),
        ) => 2,
        Some(
            Error::PlanningInfeasible(_)
            | Error::SimulationDegenerate(_)
            | Error::DegenerateSample(_)
            | Error::AlignmentDegenerate(_)
            | Error::UnbalancedDesign(_),
        ) => 3,
        Some(Error::Io { .. }) | None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Plan(a) => commands::plan(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
