use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use offeval::commands;
use offeval::{ConfigError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "offeval", version, about = "Offline recommender evaluation with item reweighting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic interaction log.
    Simulate(Args),
    /// Score recommenders over the evaluation time grid.
    Evaluate(Args),
    /// Optimize item weights for each configured p.
    Debias(Args),
    /// Merge emitted outputs into a JSON summary.
    Report(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, replacing `paths.out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Args {
    fn load(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        if let Some(out) = &self.out {
            cfg = cfg.with_out(out.clone());
        }
        Ok(cfg)
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Simulate(args) => {
            let path = commands::simulate(&args.load()?)?;
            println!("wrote {}", path.display());
        }
        Command::Evaluate(args) => {
            let rows = commands::evaluate(&args.load()?)?;
            println!("wrote {} score rows", rows.len());
        }
        Command::Debias(args) => {
            for run in commands::debias(&args.load()?)? {
                println!(
                    "p={}: D {:.6e} -> {:.6e} in {} iterations ({:?})",
                    run.p, run.d_initial, run.d_final, run.iterations, run.stop
                );
            }
        }
        Command::Report(args) => {
            let report = commands::report(&args.load()?)?;
            println!("report with {} score rows", report.scores.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
