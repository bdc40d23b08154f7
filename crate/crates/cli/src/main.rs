use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use stmn_core::data::write_sequences_csv;
use stmn_core::experiment::{self, Experiment};

#[derive(Parser)]
#[command(name = "stmn", version, about = "Train and compare manifold-constrained networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured mode on every seed and write a summary.
    Run {
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run only this mode.
        #[arg(long, value_parser = ["baseline", "stmn"])]
        mode: Option<String>,
    },
    /// Train STMN once per neighbourhood size and tabulate probe accuracy.
    SweepH {
        config: PathBuf,
        /// Comma-separated H values; defaults to the config's `h_values`.
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a summary of a finished output directory.
    Report { dir: PathBuf },
    /// Write the configured synthetic dataset for one seed as CSV.
    GenData {
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(config: &Path, seed: Option<u64>) -> Result<Experiment> {
    let mut exp = Experiment::load(config)?;
    if let Some(seed) = seed {
        exp.config.seeds = vec![seed];
    }
    Ok(exp)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            mode,
        } => {
            let mut exp = load(&config, seed)?;
            if let Some(mode) = mode {
                exp.config.modes = vec![mode];
            }
            let out = out.unwrap_or_else(|| exp.config.out_dir.clone());
            experiment::run_experiment(&exp, &out)
                .with_context(|| format!("experiment {} failed", config.display()))?;
            print!("{}", experiment::report(&out)?);
        }
        Command::SweepH {
            config,
            values,
            seed,
            out,
        } => {
            let exp = load(&config, seed)?;
            let values = if values.is_empty() {
                exp.config.h_values.clone()
            } else {
                values
            };
            let out = out.unwrap_or_else(|| exp.config.out_dir.clone());
            experiment::sweep_h(&exp, &values, &out)
                .with_context(|| format!("H sweep {} failed", config.display()))?;
            print!("{}", experiment::report(&out)?);
        }
        Command::Report { dir } => {
            if !dir.is_dir() {
                bail!("{}: not a directory", dir.display());
            }
            print!("{}", experiment::report(&dir)?);
        }
        Command::GenData { config, seed, out } => {
            let exp = load(&config, None)?;
            if exp.config.data.input_file.is_some() {
                bail!("{}: data comes from input_file, nothing to generate", config.display());
            }
            let seqs = experiment::load_sequences(&exp.config, seed)?;
            write_sequences_csv(&out, &seqs)?;
            println!("wrote {} sequences to {}", seqs.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
