use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use cuspform_cli::{emit::emit, run, ExperimentConfig};

#[derive(Parser)]
#[command(name = "cuspform", version, about = "Shock formation experiments in eikonal coordinates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its report bundle.
    Run {
        config: PathBuf,
        /// Output directory; defaults to `out/<config name>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only write the field snapshot CSV.
        #[arg(long)]
        fields_only: bool,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out, fields_only, seed } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let dir = out.unwrap_or_else(|| PathBuf::from("out").join(&config.name));
            let bundle = run(&config, fields_only)?;
            let files = emit(&bundle, &dir, fields_only)?;
            for check in &bundle.checks {
                println!("{} {} (value {:.3e}, limit {:.3e})", if check.passed { "PASS" } else { "FAIL" }, check.name, check.value, check.limit);
            }
            println!("wrote {} files to {}", files.len(), dir.display());
            Ok(bundle.passed())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
