//! Batch driver binary. Subcommands cover coupling-symbol spot checks,
//! structure-constant table builds and verification, flow simulation with
//! conserved-quantity diagnostics, measure-level Monte Carlo checks,
//! remainder-rate sweeps on the sphere and the torus, config-file runs,
//! and gnuplot script emission.
//!
//! Exit codes: 0 on success, 1 on runtime errors (I/O, solver failures),
//! 2 when a verification verdict misses or parameters are rejected.
//! Every randomized command takes an explicit seed; identical invocations
//! produce byte-identical reports.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    measure, plot, remainder_sphere, remainder_torus, simulate, structconst_build,
    structconst_verify, wigner_eval, CliError, MeasureCmd, PlotArgs, RemainderSphereArgs,
    RemainderTorusArgs, SimulateArgs, StructBuildArgs, StructVerifyArgs, WignerArgs,
};

/// Laboratory driver for the matrix quantization of 2D Euler flow.
#[derive(Parser)]
#[command(name = "zeitlin", version, propagate_version = true)]
struct Cli {
    /// Worker threads for data-parallel sections (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one coupling symbol from six doubled-integer arguments.
    Wigner {
        #[command(subcommand)]
        cmd: WignerCmd,
    },
    /// Build or verify structure-constant tables.
    Structconst {
        #[command(subcommand)]
        cmd: StructCmd,
    },
    /// Integrate the matrix flow and record conserved-quantity diagnostics.
    Simulate(SimulateArgs),
    /// Ensemble sampling and statistical checks of the invariant measure.
    Measure {
        #[command(subcommand)]
        cmd: MeasureCmd,
    },
    /// Remainder-rate sweeps across levels.
    Remainder {
        #[command(subcommand)]
        cmd: RemainderCmd,
    },
    /// Execute one command described by a TOML or JSON config file.
    Run {
        /// Path to the config file; the `command` key selects the action.
        #[arg(long)]
        config: std::path::PathBuf,
    },
    /// Emit a gnuplot script for a rate report on log-log axes.
    Plot(PlotArgs),
}

#[derive(Subcommand)]
enum WignerCmd {
    /// Print one symbol value from six doubled arguments.
    Eval(WignerArgs),
}

#[derive(Subcommand)]
enum StructCmd {
    /// Build the level-N table and write it to a cache file.
    Build(StructBuildArgs),
    /// Check a level-N table against its independent oracles.
    Verify(StructVerifyArgs),
}

#[derive(Subcommand)]
enum RemainderCmd {
    /// Sweep the spherical remainder expectation across levels.
    Sphere(RemainderSphereArgs),
    /// Sweep the flat-torus remainder expectation across levels.
    Torus(RemainderTorusArgs),
}

/// Pins the global worker pool when a thread count was requested.
#[cfg(feature = "parallel")]
fn init_workers(workers: Option<usize>) -> Result<(), CliError> {
    if let Some(count) = workers {
        if count == 0 {
            return Err(CliError::Validation("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(count)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn init_workers(workers: Option<usize>) -> Result<(), CliError> {
    if workers.is_some_and(|count| count > 1) {
        eprintln!("note: built without the parallel feature; running single-threaded");
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Wigner { cmd: WignerCmd::Eval(args) } => wigner_eval(&args),
        Command::Structconst { cmd: StructCmd::Build(args) } => structconst_build(&args),
        Command::Structconst { cmd: StructCmd::Verify(args) } => structconst_verify(&args),
        Command::Simulate(args) => simulate(&args),
        Command::Measure { cmd } => measure(&cmd),
        Command::Remainder { cmd: RemainderCmd::Sphere(args) } => remainder_sphere(&args),
        Command::Remainder { cmd: RemainderCmd::Torus(args) } => remainder_torus(&args),
        Command::Run { config } => config::run_file(&config),
        Command::Plot(args) => plot(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = init_workers(cli.workers).and_then(|()| dispatch(cli.command));
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("validation failure: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
