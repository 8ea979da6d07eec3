//! `mwm`: setpoint optimization and cycle simulation for multihead weighers.

mod commands;
mod config;
mod output;
mod tables;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::MachineArgs;
use mwm::heuristic::{BoundMode, ExactMethod, MidrangeSense};
use mwm::MwmError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "mwm", version, about = "Hopper setpoints for multihead weighing machines")]
struct Cli {
    /// Seed for every random stream (starts, lattices, simulated cycles)
    #[arg(long, global = true, env = "MWM_SEED")]
    seed: Option<u64>,
    /// Worker threads for multi-start and replications
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (repeatable)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only print errors
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List the admissible combinations and print K
    Enumerate(EnumerateArgs),
    /// Mean and variance of the smallest and largest combination weight
    Moments(MomentsArgs),
    /// Closed-form lower bound on the expected smallest combination weight
    Bound(BoundArgs),
    /// Search setpoints by maximizing the heuristic objective
    Optimize(OptimizeArgs),
    /// Simulate machine cycles for given setpoints
    Simulate(SimulateArgs),
    /// Density curves of every combination weight and the two extremes, as CSV
    Densities(DensitiesArgs),
    /// Reproduce one of the published result tables
    Table(TableArgs),
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    #[command(flatten)]
    pub machine: MachineArgs,
    /// Write the 0/1 combination matrix here as CSV
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

/// Either a machine plus setpoints, or an explicit mean vector and covariance matrix.
#[derive(Debug, Args)]
pub struct GaussianArgs {
    #[command(flatten)]
    pub machine: MachineArgs,
    /// Hopper setpoints, comma separated
    #[arg(long, value_name = "LIST", conflicts_with = "theta")]
    pub mu: Option<String>,
    /// Combination means, comma separated (use with --sigma)
    #[arg(long, value_name = "LIST", requires = "sigma")]
    pub theta: Option<String>,
    /// Covariance matrix as headerless CSV
    #[arg(long, value_name = "FILE", requires = "theta")]
    pub sigma: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MomentsArgs {
    #[command(flatten)]
    pub input: GaussianArgs,
    /// Target error of each rectangle probability
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Replace the expected maximum by the largest mean
    #[arg(long)]
    pub approx_max: bool,
    #[arg(long, short, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[command(flatten)]
    pub input: GaussianArgs,
    /// Also compute the exact expectation for comparison
    #[arg(long)]
    pub exact: bool,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, short, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    LowerBound,
    Exact,
}

impl From<ModeArg> for BoundMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::LowerBound => BoundMode::LowerBound,
            ModeArg::Exact => BoundMode::Exact,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SenseArg {
    Cap,
    Floor,
}

impl From<SenseArg> for MidrangeSense {
    fn from(s: SenseArg) -> Self {
        match s {
            SenseArg::Cap => MidrangeSense::Cap,
            SenseArg::Floor => MidrangeSense::Floor,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExactArg {
    Lattice,
    Recursion,
}

impl From<ExactArg> for ExactMethod {
    fn from(e: ExactArg) -> Self {
        match e {
            ExactArg::Lattice => ExactMethod::Lattice,
            ExactArg::Recursion => ExactMethod::Recursion,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Solver options as JSON; flags override
    #[arg(long, value_name = "FILE")]
    pub options: Option<PathBuf>,
    /// Random starting points [default: 100]
    #[arg(long)]
    pub starts: Option<usize>,
    /// How the expected smallest weight enters the midrange constraint [default: lower-bound]
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Direction of the midrange constraint [default: cap]
    #[arg(long, value_enum)]
    pub sense: Option<SenseArg>,
    /// Estimator for exact mode inside the search [default: lattice]
    #[arg(long, value_enum)]
    pub exact_method: Option<ExactArg>,
    /// Accepted constraint violation in grams [default: 0.01]
    #[arg(long)]
    pub constraint_tol: Option<f64>,
    /// Weight of the log-determinant term [default: 1]
    #[arg(long)]
    pub w_logdet: Option<f64>,
    /// Weight of the window-mass term p [default: 1]
    #[arg(long)]
    pub w_p: Option<f64>,
    /// Weight of the distinct-bin count c [default: 1]
    #[arg(long)]
    pub w_c: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// Cycles per replication [default: 50000]
    #[arg(long)]
    pub cycles: Option<usize>,
    /// Independent replications [default: 1, or 10 when chained after optimize]
    #[arg(long)]
    pub reps: Option<usize>,
    /// Shut hoppers keep their contents into the next cycle
    #[arg(long)]
    pub persist: bool,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub machine: MachineArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Simulate the returned setpoints
    #[arg(long)]
    pub simulate: bool,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Print the diagnostic panel to stderr
    #[arg(long)]
    pub panel: bool,
    #[arg(long, short, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub machine: MachineArgs,
    /// Hopper setpoints, comma separated
    #[arg(long, value_name = "LIST", required_unless_present = "from_report")]
    pub mu: Option<String>,
    /// Take machine, setpoints and stored simulation settings from an optimize report
    #[arg(long, value_name = "FILE", conflicts_with = "mu")]
    pub from_report: Option<PathBuf>,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Write the package weights of the first replication as CSV
    #[arg(long, value_name = "FILE")]
    pub packages: Option<PathBuf>,
    #[arg(long, short, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DensitiesArgs {
    #[command(flatten)]
    pub machine: MachineArgs,
    #[arg(long, value_name = "LIST")]
    pub mu: String,
    #[arg(long, default_value_t = 801)]
    pub points: usize,
    #[arg(long)]
    pub lo: Option<f64>,
    #[arg(long)]
    pub hi: Option<f64>,
    #[arg(long, short, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Table number, 1 to 5
    #[arg(value_parser = clap::value_parser!(u8).range(1..=5))]
    pub number: u8,
    /// Only these rows, e.g. "8(2),12(3)"
    #[arg(long, value_name = "LIST")]
    pub rows: Option<String>,
    /// Random starting points per optimization
    #[arg(long, default_value_t = 100)]
    pub starts: usize,
    /// Cycles per replication [default: as published for the table]
    #[arg(long)]
    pub cycles: Option<usize>,
    /// Replications for the MSE spread
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// Rows as JSON
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
}

/// Maps a failure to the documented exit status.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<MwmError>() {
            return match e {
                MwmError::InvalidConfig(_)
                | MwmError::DimensionMismatch(_)
                | MwmError::InvalidSetpoints(_)
                | MwmError::Unsupported(_) => 2,
                MwmError::Numerical(_) | MwmError::NotPositiveSemidefinite { .. } | MwmError::Degenerate { .. } => 3,
                MwmError::NoFeasibleStart { .. } | MwmError::Infeasible => 4,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() || cause.is::<csv::Error>() {
            return 2;
        }
    }
    3
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(MwmError::InvalidConfig("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Enumerate(a) => commands::enumerate(&a),
        Command::Moments(a) => commands::moments(&a, seed),
        Command::Bound(a) => commands::bound(&a, seed),
        Command::Optimize(a) => commands::optimize(&a, seed),
        Command::Simulate(a) => commands::simulate(&a, seed),
        Command::Densities(a) => commands::densities(&a, seed),
        Command::Table(a) => tables::run(&a, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        let code = |e: MwmError| exit_code(&anyhow::Error::from(e));
        assert_eq!(code(MwmError::InvalidConfig("x".into())), 2);
        assert_eq!(code(MwmError::Unsupported("x".into())), 2);
        assert_eq!(code(MwmError::Numerical("x".into())), 3);
        assert_eq!(code(MwmError::Degenerate { i: 0, j: 1 }), 3);
        assert_eq!(code(MwmError::Infeasible), 4);
        assert_eq!(code(MwmError::NoFeasibleStart { attempts: 1 }), 4);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(exit_code(&anyhow::Error::from(io).context("reading")), 2);
    }
}
