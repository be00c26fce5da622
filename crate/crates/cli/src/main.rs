use std::process::ExitCode;

use bregman_ab_cli::{cmd_compare, cmd_solve, CompareArgs, SolveArgs};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

/// Rate-distortion solvers: the minimization-free Bregman iteration,
/// its mirror-descent form and the em baselines.
#[derive(Debug, Parser)]
#[command(name = "bregman-ab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one problem and write a JSON report.
    Solve(SolveArgs),
    /// Run minfree and both em-newton schedules and write objective gaps as CSV.
    Compare(CompareArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) { 0 } else { 1 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match &cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Compare(args) => cmd_compare(args),
    };
    ExitCode::from(code as u8)
}
