use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use ndde_cli::check::{run_suites, Status, Suite};
use ndde_cli::output::{cmd_fundamental, cmd_solve, cmd_voc};
use ndde_cli::scenario::Scenario;
use ndde_cli::{CliError, Overrides};

/// Solver for linear neutral delay differential equations with
/// discontinuous initial data.
///
/// Exit codes: 0 success, 1 a check failed, 2 invalid scenario,
/// 3 neutral term not strictly delayed, 4 solver or output failure.
#[derive(Debug, Parser)]
#[command(name = "ndde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the scenario; writes solution.csv and report.json.
    Solve(RunArgs),
    /// Fundamental matrix solution; writes column_<j>.csv and report.json.
    Fundamental(RunArgs),
    /// Variation of constants for a forced scenario; writes voc.csv and report.json.
    Voc(RunArgs),
    /// Run property suites and print one PASS/FAIL line each.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long, env = "NDDE_SCENARIO")]
    scenario: PathBuf,
    /// Uniform grid nodes per unit time.
    #[arg(long, env = "NDDE_GRID_N")]
    grid_n: Option<usize>,
    /// Step length of the method of steps.
    #[arg(long, env = "NDDE_T0", allow_hyphen_values = true)]
    t0: Option<f64>,
    /// Picard iteration tolerance.
    #[arg(long, env = "NDDE_TOL", allow_hyphen_values = true)]
    tol: Option<f64>,
    /// Solve fundamental columns in parallel.
    #[arg(long, env = "NDDE_PARALLEL_COLUMNS", action = ArgAction::Set)]
    parallel_columns: Option<bool>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            grid_n: self.grid_n,
            t0: self.t0,
            tol: self.tol,
            parallel_columns: self.parallel_columns,
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory.
    #[arg(long, env = "NDDE_OUT", default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated suites; all by default.
    #[arg(long, env = "NDDE_SUITE", value_delimiter = ',')]
    suite: Vec<Suite>,
}

type Writer = fn(&ndde::Problem, &ndde::SolverConfig, &Path) -> Result<Vec<PathBuf>, CliError>;

fn write(args: &RunArgs, f: Writer) -> Result<ExitCode, CliError> {
    let scenario = Scenario::load(&args.common.scenario)?;
    let p = scenario.problem()?;
    let cfg = scenario.solver_config(&args.common.overrides());
    for path in f(&p, &cfg, &args.out)? {
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn check(args: &CheckArgs) -> Result<ExitCode, CliError> {
    let scenario = Scenario::load(&args.common.scenario)?;
    let p = scenario.problem()?;
    let cfg = scenario.solver_config(&args.common.overrides());
    let suites = if args.suite.is_empty() {
        Suite::ALL.to_vec()
    } else {
        args.suite.clone()
    };
    let outcomes = run_suites(&p, &cfg, &suites);
    let mut failed = 0;
    for o in &outcomes {
        println!("{o}");
        failed += usize::from(o.status == Status::Fail);
    }
    if failed > 0 {
        println!("{failed} of {} suites failed", outcomes.len());
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Solve(a) => write(a, cmd_solve),
        Command::Fundamental(a) => write(a, cmd_fundamental),
        Command::Voc(a) => write(a, cmd_voc),
        Command::Check(a) => check(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
