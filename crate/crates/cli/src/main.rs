use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use sindex_core::pipeline::{run, RunConfig, Stage};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Ingest,
    Graph,
    Distances,
    Stats,
    Potential,
    Sindex,
    Match,
    Apps,
    Synth,
    All,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Stage {
        match c {
            Command::Ingest => Stage::Ingest,
            Command::Graph => Stage::Graph,
            Command::Distances => Stage::Distances,
            Command::Stats => Stage::Stats,
            Command::Potential => Stage::Potential,
            Command::Sindex => Stage::Sindex,
            Command::Match => Stage::Match,
            Command::Apps => Stage::Apps,
            Command::Synth => Stage::Synth,
            Command::All => Stage::All,
        }
    }
}

/// Network-based citation indicator pipeline.
#[derive(Debug, Parser)]
#[command(name = "sindex", version)]
struct Args {
    /// Stage to run; `all` runs every analysis stage after `synth`/ingestion.
    #[arg(value_enum)]
    command: Command,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the run seed and the generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let args = Args::parse();
    match execute(&args) {
        Ok(files) => {
            for f in files {
                log::info!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(args: &Args) -> sindex_core::Result<Vec<PathBuf>> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
        cfg.synth.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(w) = args.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
            .map_err(|e| sindex_core::Error::Config(e.to_string()))?;
    }
    run(args.command.into(), &cfg)
}
