//! `focal` command-line front end.

mod analyze;
mod bench;
mod common;
mod exit;
mod kernel;
mod repetition_cmd;
mod simulate;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "focal",
    about = "Windowed attention decay: spec analysis, dispersion sweeps, kernel checks, \
             repetition scoring, benchmarks",
    version
)]
struct Cli {
    /// Worker threads for parallel paths (1 forces a single deterministic
    /// worker; outputs are deterministic at any count).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify a rotary spec and list repetition-risk positions.
    AnalyzeSpec(analyze::AnalyzeArgs),
    /// Planted-pattern dispersion sweep over decay factors.
    Simulate(simulate::SimulateArgs),
    /// Tiled-vs-reference equivalence sweep.
    KernelCheck(kernel::KernelArgs),
    /// Frame-repetition score for a clip.
    Repetition(repetition_cmd::RepetitionArgs),
    /// Reference-vs-tiled timing and memory table.
    Bench(bench::BenchArgs),
}

fn main() {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build_global()
            .ok();
    }
    let result = match &cli.command {
        Command::AnalyzeSpec(args) => analyze::run(args),
        Command::Simulate(args) => simulate::run(args),
        Command::KernelCheck(args) => kernel::run(args),
        Command::Repetition(args) => repetition_cmd::run(args),
        Command::Bench(args) => bench::run(args),
    };
    match result {
        Ok(()) => std::process::exit(exit::OK),
        Err(failure) => {
            eprintln!("error: {failure}");
            std::process::exit(failure.code);
        }
    }
}
