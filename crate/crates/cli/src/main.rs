use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use tempgate::io::{convert_linqs, write_edge_text, PlanetoidSplit};
use tempgate_cli::{execute, Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "tempgate", version, about = "Temperature and gating experiments for graph attention")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output CSV path; a JSON mirror is written next to it. Without it the
    /// CSV goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of seeds, overriding the config.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every configured method for every seed.
    Train,
    /// Run the CSBM theory verification suite.
    CsbmVerify,
    /// Train under a grid of feature-noise levels.
    NoiseSweep,
    /// Finite-difference gradient checks for every method.
    GradCheck,
    /// Average ranks of methods across result tables.
    Rank {
        /// Result tables written by `train`.
        inputs: Vec<PathBuf>,
    },
    /// Convert a LINQS citation dump into the plain-text dataset format.
    Convert {
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        cites: PathBuf,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if cli.seeds.is_some() {
        cfg.seeds = cli.seeds;
    }
    let out = cli.out.or(cfg.out.clone());
    let (cmd, rank_inputs) = match cli.cmd {
        Cmd::Train => (Command::Train, vec![]),
        Cmd::CsbmVerify => (Command::CsbmVerify, vec![]),
        Cmd::NoiseSweep => (Command::NoiseSweep, vec![]),
        Cmd::GradCheck => (Command::GradCheck, vec![]),
        Cmd::Rank { inputs } => (Command::Rank, inputs),
        Cmd::Convert {
            content,
            cites,
            split_seed,
        } => {
            let read = |p: &PathBuf| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
            let split = PlanetoidSplit {
                seed: split_seed,
                ..PlanetoidSplit::default()
            };
            let ds = convert_linqs(&read(&content)?, &read(&cites)?, split)?;
            let text = write_edge_text(&ds);
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            return Ok(true);
        }
    };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        pool = pool.num_threads(t);
    }
    let outcome = pool.build()?.install(|| execute(cmd, &cfg, &rank_inputs))?;
    match out {
        Some(p) => {
            outcome.table.save(&p)?;
            eprintln!("wrote {} rows to {}", outcome.table.rows.len(), p.display());
        }
        None => print!("{}", outcome.table.to_csv_string()?),
    }
    if outcome.failed {
        eprintln!("one or more checks failed");
    }
    Ok(!outcome.failed)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
