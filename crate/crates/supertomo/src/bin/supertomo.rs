//! Experiment harness CLI. Exit codes: 0 full success, 1 configuration or
//! I/O error, 2 campaign finished with failed repetitions.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use supertomo::campaign;
use supertomo::config::parse_config;
use supertomo::io;
use supertomo::phantom::shepp_logan;

/// Environment variable that overrides a config's `output_dir`.
const OUTPUT_DIR_ENV: &str = "SUPERTOMO_OUTPUT_DIR";

#[derive(Parser)]
#[command(
    name = "supertomo",
    about = "Superiorized maximum-likelihood tomographic reconstruction experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a reconstruction campaign described by a key-value config file.
    Run {
        /// Path to the experiment config.
        config: PathBuf,
    },
    /// Merge the mean plot curves of completed runs into one CSV.
    Compare {
        /// Two or more run directories produced by `run`.
        dirs: Vec<PathBuf>,
        /// Output CSV path.
        #[arg(long, default_value = "compare.csv")]
        out: PathBuf,
    },
    /// Write a Shepp-Logan phantom image (.bin for binary, anything else
    /// for CSV).
    Phantom {
        /// Image side in pixels.
        #[arg(long, default_value_t = 128)]
        n: usize,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let mut experiment = match parse_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(1);
                }
            };
            if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
                experiment.output_dir = dir;
            }
            match campaign::run_campaign(&experiment) {
                Ok(outcome) if outcome.fully_succeeded() => {
                    println!("campaign complete: {}", outcome.output_dir.display());
                    ExitCode::SUCCESS
                }
                Ok(outcome) => {
                    for (rep, message) in &outcome.failures {
                        eprintln!("repetition {rep} failed: {message}");
                    }
                    println!(
                        "campaign finished with {} failed repetition(s): {}",
                        outcome.failures.len(),
                        outcome.output_dir.display()
                    );
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("campaign error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Compare { dirs, out } => match campaign::compare(&dirs, &out) {
            Ok(()) => {
                println!("wrote {}", out.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("compare error: {e}");
                ExitCode::from(1)
            }
        },
        Command::Phantom { n, out } => {
            if n == 0 {
                eprintln!("phantom error: --n must be >= 1");
                return ExitCode::from(1);
            }
            let image = shepp_logan(n);
            let result = if out.extension().is_some_and(|e| e == "bin") {
                io::write_image_binary(&out, &image)
            } else {
                io::write_image_csv(&out, &image)
            };
            match result {
                Ok(()) => {
                    println!("wrote {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("phantom error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
