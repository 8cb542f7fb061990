use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use wscl_core::runner::{self, Grid, RunConfig};

/// Weakly supervised continual learning experiments.
#[derive(Debug, Parser)]
#[command(name = "wscl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train and evaluate one configuration over its seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid search on a validation hold-out; writes best.cfg.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate every record.csv below a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn execute(cli: Cli) -> wscl_core::Result<()> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            let record = runner::run(&cfg)?;
            println!("{}", record.summary());
            println!("artifacts in {}", cfg.out.display());
        }
        Command::Grid { config, grid, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(o) = out {
                cfg.out = o;
            }
            let outcome = runner::grid_search(&cfg, &Grid::load(&grid)?)?;
            for (p, rec) in &outcome.points {
                let Some(rec) = rec else {
                    println!("  {:>3}  diverged        {}", p.index, p.label());
                    continue;
                };
                let (a, sd) = rec.accuracy_stats();
                let mark = if p.index == outcome.best_index { "*" } else { " " };
                println!(
                    "{mark} {:>3}  {:.2} ± {:.2}%  {}",
                    p.index,
                    100.0 * a,
                    100.0 * sd,
                    p.label()
                );
            }
            println!("best config written to {}", cfg.out.join("best.cfg").display());
        }
        Command::Report { input } => {
            let table = runner::report(&input)?;
            print!("{}", table.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
