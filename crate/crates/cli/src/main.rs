use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use levyou::harness::Manifest;
use levyou_cli::config::ExperimentConfig;
use levyou_cli::run::{run, RunOptions};
use levyou_cli::validate::validate;
use levyou_cli::CliError;

/// Levy-driven OU experiments: assumption checks, solvers and exponent verification.
#[derive(Parser)]
#[command(name = "levyou", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the model assumptions and print a witness for each.
    Validate { config: PathBuf },
    /// Validate, then execute every run block.
    Run {
        config: PathBuf,
        /// Output directory (defaults to `output.dir` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of blocks run concurrently.
        #[arg(long)]
        workers: Option<usize>,
        /// Base seed; block i without its own seed uses base + i.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the summary of an existing manifest.
    Report { manifest: PathBuf },
}

/// 0 all good, 1 a verification failed, 3 a run errored.
fn status(m: &Manifest) -> u8 {
    if !m.all_runs_ok() {
        3
    } else if !m.all_pass() {
        1
    } else {
        0
    }
}

fn main_inner(cli: Cli) -> Result<u8, CliError> {
    match cli.cmd {
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rep = validate(&cfg)?;
            for l in rep.lines() {
                println!("{l}");
            }
            Ok(if rep.pass() { 0 } else { 2 })
        }
        Command::Run { config, out, workers, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rep = validate(&cfg)?;
            if !rep.pass() {
                for l in rep.lines() {
                    eprintln!("{l}");
                }
                return Ok(2);
            }
            let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let out = out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
            let m = run(&cfg, &RunOptions { out: out.clone(), workers, seed })?;
            for l in m.summary_lines() {
                println!("{l}");
            }
            println!("manifest: {}", out.join("manifest.json").display());
            Ok(status(&m))
        }
        Command::Report { manifest } => {
            let m = Manifest::read(&manifest).map_err(CliError::Config)?;
            println!("config {}", m.config_hash);
            for l in m.summary_lines() {
                println!("{l}");
            }
            Ok(status(&m))
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
