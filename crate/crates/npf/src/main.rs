use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use npf::runner::{self, CommandOptions, ExperimentKind, ValidateOptions};

/// Monte Carlo solver for semilinear parabolic PDEs with nonlinear
/// Neumann boundary conditions.
#[derive(Parser)]
#[command(name = "npf", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Coupled penalized-vs-reflected forward convergence experiment.
    Forward(ExperimentArgs),
    /// Evaluate u (and u_n for each configured penalty level) at the
    /// configured query points.
    Solve(ExperimentArgs),
    /// Penalty sweep of u_n against u at the configured query points.
    Sweep(ExperimentArgs),
    /// Run the built-in validation problems and write their reports.
    Validate(ValidateArgs),
}

#[derive(clap::Args)]
struct ExperimentArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's Monte Carlo seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write per-bundle trajectory CSVs (large).
    #[arg(long)]
    dump_paths: bool,
    /// Also write per-step backward-solver diagnostics CSVs.
    #[arg(long)]
    dump_diagnostics: bool,
}

#[derive(clap::Args)]
struct ValidateArgs {
    /// Monte Carlo seed for the validation runs.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory for the validation reports.
    #[arg(long, default_value = "npf-validate-out")]
    out_dir: PathBuf,
    /// Reduced ensembles with matching looser statistical tolerances.
    #[arg(long)]
    quick: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    // NPF_THREADS caps the worker count; results are identical for any
    // value, only speed changes.
    if let Ok(raw) = std::env::var("NPF_THREADS") {
        if let Ok(n) = raw.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }

    let cli = Cli::parse();
    let code = match cli.command {
        Command::Forward(args) => runner::run_command(ExperimentKind::Forward, &options(args)),
        Command::Solve(args) => runner::run_command(ExperimentKind::Solve, &options(args)),
        Command::Sweep(args) => runner::run_command(ExperimentKind::Sweep, &options(args)),
        Command::Validate(args) => runner::run_validate(&ValidateOptions {
            seed: args.seed,
            out_dir: args.out_dir,
            quick: args.quick,
        }),
    };
    ExitCode::from(code as u8)
}

fn options(args: ExperimentArgs) -> CommandOptions {
    CommandOptions {
        config_path: args.config,
        seed: args.seed,
        out_dir: args.out_dir,
        dump_paths: args.dump_paths,
        dump_diagnostics: args.dump_diagnostics,
    }
}
