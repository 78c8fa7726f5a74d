//! Config-driven runner for the `cbi` command-line tool.

// negated comparisons keep NaN config values on the error path
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod config;
pub mod error;
pub mod run;

use std::path::PathBuf;

use clap::Parser;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use run::{run, RunOutcome};

#[derive(Debug, Parser)]
#[command(
    name = "cbi",
    version,
    about = "Simulate and verify continuous-state branching processes with immigration"
)]
pub struct Args {
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output root; files go to `<out>/<name>/`.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (wall time only, results do not change).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Print only the summary line.
    #[arg(long)]
    pub quiet: bool,
}

/// Runs the tool and returns its exit code.
pub fn main_with_args(args: &Args) -> i32 {
    match execute(args) {
        Ok(outcome) => {
            if let Some(s) = &outcome.summary {
                println!("{s}");
            }
            if !args.quiet {
                for f in &outcome.files {
                    println!("wrote {}", f.display());
                }
            }
            0
        }
        Err(e) => {
            eprintln!("cbi: {e}");
            e.exit_code()
        }
    }
}

fn execute(args: &Args) -> CliResult<RunOutcome> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cbi_core::batch::with_threads(args.threads, || run(&cfg, &args.out))?
}
