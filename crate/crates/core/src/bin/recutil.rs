use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use recutil::cli::{self, CommandOutput, SolveConfig, StartSpec};
use recutil::fixed_point::{DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE};

#[derive(Parser)]
#[command(
    name = "recutil",
    version,
    about = "Recursive utility and portfolio choice with narrow framing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file for structural problems.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Solve the utility recursion for a fixed policy or a raw (kappa, varpi) entry.
    SolveUtility {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Verify the feasibility conditions and solve the consumption-portfolio problem.
    SolvePortfolio {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Run the feasibility checks only.
    Verify {
        #[arg(long)]
        model: PathBuf,
        /// Also evaluate the general (non-corner) negative gain-loss bound.
        #[arg(long)]
        general: bool,
    },
    /// Solve the built-in two-state stock market example and compare with published values.
    ReproducePaperExample {
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Count fixed points of the single-state map f -> H(1, delta f + varpi).
    AnalyzeSingleton {
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 2.0)]
        gamma: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, allow_hyphen_values = true)]
        varpi: f64,
    },
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
    max_iter: usize,
    /// ones, phi0, f0 or comma-separated values.
    #[arg(long)]
    start: Option<StartSpec>,
    /// Solve even when verification fails.
    #[arg(long)]
    force: bool,
    /// CSV file receiving iteration,residual rows.
    #[arg(long)]
    trace: Option<PathBuf>,
}

impl From<SolveArgs> for SolveConfig {
    fn from(a: SolveArgs) -> Self {
        SolveConfig {
            tolerance: a.tol,
            max_iterations: a.max_iter,
            start: a.start,
            force: a.force,
            trace: a.trace,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                cli::EXIT_VALIDATION
            } else {
                cli::EXIT_OK
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let out: CommandOutput = match cli.command {
        Command::Validate { model } => cli::cmd_validate(&model),
        Command::SolveUtility { model, solve } => cli::cmd_solve_utility(&model, &solve.into()),
        Command::SolvePortfolio { model, solve } => cli::cmd_solve_portfolio(&model, &solve.into()),
        Command::Verify { model, general } => cli::cmd_verify(&model, general),
        Command::ReproducePaperExample { solve } => cli::cmd_reproduce_example(&solve.into()),
        Command::AnalyzeSingleton {
            beta,
            rho,
            gamma,
            delta,
            varpi,
        } => cli::cmd_analyze_singleton(beta, rho, gamma, delta, varpi),
    };
    println!("{}", out.report_json());
    eprintln!("{}", out.summary.trim_end());
    ExitCode::from(out.exit_code)
}
