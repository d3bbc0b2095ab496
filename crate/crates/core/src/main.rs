use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use amdkit::runner::{compare_dirs, run_config_file, Overrides};
use amdkit::Error;

#[derive(Parser)]
#[command(name = "amdkit", version, about = "Accelerated dynamics experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a TOML experiment and write events.csv, trajectory.csv, summary.json, manifest.json.
    Run {
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (results do not depend on this).
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory (overrides `out` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare residence times and exit regions of two run directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
    },
}

/// 0 success / comparison passed, 1 runtime failure / comparison failed,
/// 2 bad configuration or input.
fn status(e: &Error) -> ExitCode {
    match e {
        Error::Config(_) | Error::Schema(_) | Error::InvalidInput(_) | Error::Io(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, workers, out } => match run_config_file(&config, &Overrides { seed, workers, out }) {
            Ok(dir) => {
                println!("{}", dir.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                status(&e)
            }
        },
        Command::Compare { a, b, alpha } => match compare_dirs(&a, &b, alpha) {
            Ok(report) => {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
                if report.pass {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(1)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                status(&e)
            }
        },
    }
}
