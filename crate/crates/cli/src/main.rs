use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nlap_cli::{CliError, RunOptions};
use serde_json::json;

#[derive(Parser)]
#[command(name = "nlap", version, about = "Run nonlocal Dirichlet and branch-scan experiments from a config file")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the pipeline described by a TOML config.
    Run {
        config: PathBuf,
        /// Cap on worker threads.
        #[arg(long)]
        threads: Option<usize>,
        /// Root directory for run outputs (overrides NLAP_OUTPUT_DIR and the config).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare two runs given as manifest files or run directories.
    Diff { a: PathBuf, b: PathBuf },
}

fn dispatch(cli: Cli) -> Result<serde_json::Value, CliError> {
    match cli.command {
        Command::Run {
            config,
            threads,
            output,
            seed,
        } => {
            let s = nlap_cli::run(&config, &RunOptions { threads, output, seed })?;
            Ok(json!({
                "run_dir": s.dir,
                "pipeline": s.manifest.pipeline,
                "headline": s.manifest.headline,
            }))
        }
        Command::Diff { a, b } => Ok(serde_json::to_value(nlap_cli::diff(&a, &b)?)?),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            println!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
