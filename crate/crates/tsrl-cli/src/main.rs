use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tsrl_cli::train::TrainOverrides;
use tsrl_core::qnet::Variant;

#[derive(Parser)]
#[command(name = "tsrl", about = "Temporal-shift Q-learning experiment harness", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Train one run into a run directory.
    Train {
        /// Run config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's algorithm.
        #[arg(long, value_parser = parse_variant)]
        algo: Option<Variant>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy evaluation of a checkpoint; writes eval.csv next to it.
    Eval {
        /// Checkpoint manifest path.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: u64,
        /// Base seed; episode i uses seed + i.
        #[arg(long)]
        seed: u64,
    },
    /// Summarize run directories into one table.
    Aggregate {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Draw learning curves for run directories as SVG.
    Plot {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference audit of every backward pass (64-bit).
    Gradcheck,
}

fn run(cli: Cli) -> tsrl_core::Result<()> {
    match cli.command {
        Command::Train { config, seed, algo, out } => {
            let outcome = tsrl_cli::cmd_train(&config, &TrainOverrides { seed, algo, out })?;
            println!(
                "trained {} episodes into {}; mean return over last 20: {}",
                outcome.rows.len(),
                outcome.run_dir.display(),
                outcome.recent_mean_return(20)
            );
        }
        Command::Eval { checkpoint, episodes, seed } => {
            let outcome = tsrl_cli::cmd_eval(&checkpoint, episodes, seed)?;
            println!("mean_return {} over {} episodes", outcome.mean_return, outcome.returns.len());
        }
        Command::Aggregate { dirs } => {
            tsrl_cli::cmd_aggregate(&dirs)?;
        }
        Command::Plot { dirs, out } => {
            tsrl_cli::cmd_plot(&dirs, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Gradcheck => {
            let report = tsrl_cli::cmd_gradcheck()?;
            if !report.passed() {
                return Err(tsrl_core::Error::External(format!(
                    "gradient check failed: {}",
                    report.failing().join(", ")
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}
