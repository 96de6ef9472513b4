//! `matmi`: synthesize data, reconstruct the cross-property factor, run the
//! self-checks and tabulate logs.
//!
//! Exit status: 0 success, 1 verification failure, 2 input error, 3 solver
//! failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use matmi::reconstruct::Algorithm;
use matmi::verify::Level;

#[derive(Parser)]
#[command(name = "matmi", version, about = "Cross-property factor reconstruction for anisotropic MAT-MI")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Run settings shared by every command that builds a manifest. Flags
/// override the config file, which overrides the built-in defaults.
#[derive(Args, Clone, Default)]
pub struct RunArgs {
    /// Flat `key = value` file; every manifest field may be set.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub phantom: Option<String>,
    /// Cells per side of the unit-square mesh.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Record the creation time in the manifest (breaks byte-identical reruns).
    #[arg(long)]
    pub timestamp: bool,
    /// Also write CSV twins of every field file.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the true factor, tensor and internal data of a phantom.
    Synth {
        #[command(flatten)]
        run: RunArgs,
        /// Relative noise level δ.
        #[arg(long)]
        delta: Option<f64>,
        /// Synthesize on an m-cell mesh and interpolate down.
        #[arg(long)]
        oracle_mesh: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct the factor from a synthesized data directory.
    Reconstruct {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        algorithm: Option<Algorithm>,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the operator self-checks and print a pass/fail table.
    Verify {
        #[arg(default_value = "quick")]
        level: Level,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate a log file, or summarize a sweep directory.
    Report {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct at several noise levels concurrently.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,0.06,0.12,0.24")]
        deltas: Vec<f64>,
        #[arg(long)]
        algorithm: Option<Algorithm>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth {
            run,
            delta,
            oracle_mesh,
            out,
        } => commands::synth(&run, delta, oracle_mesh, &out),
        Command::Reconstruct {
            data,
            algorithm,
            run,
            out,
        } => commands::reconstruct(&data, algorithm, &run, &out),
        Command::Verify { level, out } => commands::verify(level, out.as_deref()),
        Command::Report { input, out } => commands::report(&input, out.as_deref()),
        Command::Sweep {
            run,
            deltas,
            algorithm,
            out,
        } => commands::sweep(&run, &deltas, algorithm, &out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_solver_failure() { 3 } else { 2 })
        }
    }
}
