//! Experiment runner for the collision-coupled map lattice.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod selfcheck;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, ValueEnum};

use crate::commands::Context;
use crate::config::load_config;
use crate::error::CliError;
use crate::output::{OutputDir, RunManifest, TOOL_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subcommand {
    SimulateSurvival,
    HittingLaw,
    Count,
    Ulam,
    Theta,
    Example,
    Selfcheck,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Self::SimulateSurvival => "simulate-survival",
            Self::HittingLaw => "hitting-law",
            Self::Count => "count",
            Self::Ulam => "ulam",
            Self::Theta => "theta",
            Self::Example => "example",
            Self::Selfcheck => "selfcheck",
        }
    }

    fn needs_output(self) -> bool {
        !matches!(self, Self::Example | Self::Selfcheck)
    }
}

#[derive(Debug, Parser)]
#[command(name = "collab", version, about = "Rare-event experiments on collision-coupled map lattices")]
pub struct Args {
    pub subcommand: Subcommand,
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "COLLAB_WORKERS")]
    pub workers: Option<usize>,
}

/// Runs one invocation and returns the process exit code.
pub fn run(args: Args) -> u8 {
    match execute(&args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(args: &Args) -> Result<(), CliError> {
    let started = Instant::now();
    let config = args.config.as_deref().map(load_config).transpose()?;
    let out_path = args
        .out
        .clone()
        .or_else(|| config.as_ref().and_then(|c| c.config.output.clone()));
    if out_path.is_none() && args.subcommand.needs_output() {
        return Err(CliError::Schema(format!("{} needs --out or an `output` entry", args.subcommand.name())));
    }
    let workers = match args.workers {
        Some(0) => return Err(CliError::Schema("--workers must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let seed = args
        .seed
        .or_else(|| config.as_ref().map(|c| c.config.run.seed))
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let out = OutputDir::create(out_path.as_deref())?;
    let mut ctx = Context::new(config, seed, out);
    pool.install(|| match args.subcommand {
        Subcommand::SimulateSurvival => commands::simulate_survival(&mut ctx),
        Subcommand::HittingLaw => commands::hitting_law(&mut ctx),
        Subcommand::Count => commands::count(&mut ctx),
        Subcommand::Ulam => commands::ulam_report(&mut ctx),
        Subcommand::Theta => commands::theta(&mut ctx),
        Subcommand::Example => commands::example(&mut ctx),
        Subcommand::Selfcheck => commands::selfcheck(&mut ctx),
    })?;
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.into(),
        subcommand: args.subcommand.name().into(),
        config_hash: ctx.config.as_ref().map(|c| c.hash.clone()),
        master_seed: seed,
        workers,
        files: ctx.out.files().to_vec(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        warnings: ctx.warnings.clone(),
        open_questions: ctx.open_questions.clone(),
        provenance: ctx.provenance.clone(),
    };
    ctx.out.write_manifest(&manifest)?;
    if ctx.failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Assertion(ctx.failures.join(", ")))
    }
}
