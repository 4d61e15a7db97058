//! Batch front door: `micromorph <experiment> --config <path>`.
//!
//! Exit codes: 0 all verdicts pass, 1 verdict failure, 2 config error,
//! 3 numerical failure.

use clap::Parser;
use micromorph::config::{Experiment, RunConfig};
use micromorph::{runner, Error};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "micromorph", version, about = "Relaxed micromorphic verification laboratory")]
struct Cli {
    /// experiment: solve | verify-transforms | korn | helmholtz | probe | full-regularity
    experiment: String,
    /// path to the run configuration (key-value sections or JSON)
    #[arg(long)]
    config: PathBuf,
    /// cap on worker parallelism (orchestration is sequential)
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// override the output directory from the config
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let experiment = match Experiment::parse(&cli.experiment) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut config = match RunConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    config.threads = cli.threads.max(1);
    if let Some(out) = cli.out {
        config.out_dir = out;
    }
    match runner::run(experiment, &config) {
        Ok(outcome) => {
            println!(
                "{}: {} (artifacts in {})",
                experiment.name(),
                if outcome.passed { "pass" } else { "fail" },
                config.out_dir.display()
            );
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e @ Error::ConfigError(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
