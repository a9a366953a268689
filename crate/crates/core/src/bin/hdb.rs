//! `hdb <bounds|benchmark|sweep|surface> --config PATH [--seed N] [--paths M] [--steps K] [--out PATH]`
//!
//! `HDB_THREADS` caps the number of worker threads.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use hdb_core::cli::{self, Command, Overrides, EXIT_CONFIG};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    /// Lower and upper bounds for every candidate control.
    Bounds,
    /// Closed-form benchmark value.
    Benchmark,
    /// Bounds over randomly sampled model parameters.
    Sweep,
    /// Feedback policy grid and terminal wealth histogram.
    Surface,
}

#[derive(Debug, Parser)]
#[command(
    name = "hdb",
    version,
    about = "Dual-control bounds for utility maximisation under the Heston model"
)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// Configuration file with `key = value` lines.
    #[arg(long)]
    config: PathBuf,
    /// Simulation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of simulated paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Number of time steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG as u8);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    if let Ok(v) = std::env::var("HDB_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                {
                    eprintln!("hdb: cannot size thread pool: {e}");
                }
            }
            _ => {
                eprintln!("hdb: HDB_THREADS must be a positive integer, got `{v}`");
                return ExitCode::from(EXIT_CONFIG as u8);
            }
        }
    }
    let command = match args.command {
        Cmd::Bounds => Command::Bounds,
        Cmd::Benchmark => Command::Benchmark,
        Cmd::Sweep => Command::Sweep,
        Cmd::Surface => Command::Surface,
    };
    let overrides = Overrides {
        seed: args.seed,
        paths: args.paths,
        steps: args.steps,
        out: args.out,
    };
    ExitCode::from(cli::run(command, &args.config, &overrides) as u8)
}
