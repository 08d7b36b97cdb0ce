//! `ffgt`: generate SBM-PATTERN data, train focal/full graph transformers,
//! run focal-length ablations and inspect masks.

mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Config;
use error::CliError;

#[derive(Parser)]
#[command(name = "ffgt", version, about = "Focal and full-range graph transformer experiments")]
struct Cli {
    /// TOML file with [sbm], [model], [train] and [ablate] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides sbm.seed for gen, train.seed for train and the seed list for ablate.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test graph files and a manifest.
    Gen,
    /// Print dataset statistics of a graph file or data directory.
    Stats { path: PathBuf },
    /// Train one model and evaluate it on the test split.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train every (fl, seed) pair and tabulate test accuracy.
    Ablate {
        #[arg(long)]
        data: PathBuf,
    },
    /// Finite-difference check of every differentiable primitive and a full model.
    Gradcheck {
        #[arg(long, hide = true)]
        fault: Option<String>,
    },
    /// Print the dense focal mask and ego-nets of one graph.
    Maskdump {
        file: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        fl: usize,
    },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::usage("--jobs must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::failure(e.to_string()))?;
    }
    let mut cfg = Config::load(cli.config.as_deref())?;
    let out = cli.out.as_deref();
    match cli.command {
        Command::Gen => {
            if let Some(s) = cli.seed {
                cfg.sbm.seed = s;
            }
            cfg.validate()?;
            commands::print(&commands::gen(&cfg, out)?)?;
        }
        Command::Stats { path } => commands::emit(&commands::stats(&path)?, out, "stats.txt")?,
        Command::Train { data } => {
            if let Some(s) = cli.seed {
                cfg.train.seed = s;
            }
            cfg.validate()?;
            commands::print(&commands::train_cmd(&cfg, &data, out)?)?;
        }
        Command::Ablate { data } => {
            if let Some(s) = cli.seed {
                cfg.ablate.seeds = vec![s];
            }
            cfg.validate()?;
            commands::print(&commands::ablate_cmd(&cfg, &data, out)?)?;
        }
        Command::Gradcheck { fault } => {
            let (table, ok) = commands::gradcheck(cli.seed.unwrap_or(0), fault.as_deref())?;
            commands::emit(&table, out, "gradcheck.txt")?;
            return Ok(ok);
        }
        Command::Maskdump { file, index, fl } => {
            commands::emit(&commands::maskdump(&file, index, fl)?, out, "mask.txt")?
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(error::EXIT_FAILURE as u8),
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
