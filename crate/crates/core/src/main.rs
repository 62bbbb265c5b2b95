use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mfg_sl::cli::{self, RunConfig};
use mfg_sl::fixedpoint::SolveStatus;

#[derive(Parser)]
#[command(name = "mfg-sl", version, about = "Semi-Lagrangian mean field game solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Built-in problem: test1, test2 or nogame
    #[arg(long)]
    problem: Option<String>,
    /// Flat key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $MFG_SL_OUT, then ./out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Space step override
    #[arg(long)]
    rho: Option<f64>,
    /// Time step override
    #[arg(long = "h")]
    h: Option<f64>,
    /// Mollifier width override
    #[arg(long)]
    eps: Option<f64>,
    /// Interaction kernel width override
    #[arg(long)]
    sigma: Option<f64>,
    /// Stopping threshold override
    #[arg(long)]
    tau: Option<f64>,
    /// Fixed-point iteration cap
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    /// Write every k-th time level to the CSV outputs
    #[arg(long = "snapshot-every")]
    snapshot_every: Option<usize>,
    /// Worker threads (only 1 is supported)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem and write mass/value/gradient/errors CSVs plus a
    /// summary JSON
    Run(RunArgs),
    /// Reproduce the four-row refinement table (20 fixed-point updates each)
    Table1,
    /// Self-convergence study over a refinement sequence anchored at a preset
    Convergence {
        /// Built-in problem: test1, test2 or nogame
        #[arg(long)]
        problem: String,
        /// Number of refinement levels (rho halves per level)
        #[arg(long, default_value_t = 3)]
        levels: usize,
        /// Fixed-point iteration cap per level
        #[arg(long = "max-iter")]
        max_iter: Option<usize>,
    },
}

fn run_config(args: RunArgs) -> Result<RunConfig, mfg_sl::SolverError> {
    let mut config = match &args.config {
        Some(path) => cli::parse_config_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = args.problem {
        config.problem = p;
    }
    if let Some(out) = args.out {
        config.out = out;
    }
    config.rho = args.rho.or(config.rho);
    config.h = args.h.or(config.h);
    config.eps = args.eps.or(config.eps);
    config.sigma = args.sigma.or(config.sigma);
    config.tau = args.tau.or(config.tau);
    config.max_iter = args.max_iter.or(config.max_iter);
    if let Some(s) = args.snapshot_every {
        config.snapshot_every = s;
    }
    if let Some(t) = args.threads {
        config.threads = t;
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run_config(args).and_then(cli::cmd_run).map(|outcome| {
            println!(
                "{}: {} after {} iterations (E_v = {:.3e}, E_m = {:.3e}), wrote {}",
                outcome.summary.config.problem,
                outcome.summary.status,
                outcome.summary.iterations,
                outcome.summary.final_e_v,
                outcome.summary.final_e_m,
                outcome.summary.config.out.display()
            );
            match outcome.status {
                SolveStatus::Converged => ExitCode::SUCCESS,
                SolveStatus::CapReached => ExitCode::from(2),
            }
        }),
        Command::Table1 => cli::cmd_table1().map(|rows| {
            cli::print_table1(&rows);
            ExitCode::SUCCESS
        }),
        Command::Convergence {
            problem,
            levels,
            max_iter,
        } => problem
            .parse()
            .and_then(|name| cli::cmd_convergence(name, levels, max_iter))
            .map(|report| {
                cli::print_convergence(&report);
                ExitCode::SUCCESS
            }),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
