//! `expoprop`: fit propagation methods, run simulation studies, and build
//! exposure ensembles from a first-stage downscaler.

// `!(x > 0.0)` deliberately rejects NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod downscale;
mod error;
mod fit;
mod output;
mod simulate;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{config_hash, load, DownscaleConfig, FitConfig, SimulateConfig, Versioned};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "expoprop", version, about)]
struct Cli {
    /// Worker threads for chains and replicates (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Repeat for more detail (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(short, long)]
    config: PathBuf,

    /// Directory for results and the run manifest.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,

    /// Replace the seed given in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one propagation method to a health dataset and exposure ensemble.
    Fit(RunArgs),
    /// Run a simulation grid; rerunning into the same directory resumes it.
    Simulate(RunArgs),
    /// Fit the downscaler and write a daily-max exposure ensemble.
    Downscale(RunArgs),
}

trait Seeded {
    fn set_seed(&mut self, seed: u64);
    fn seed(&self) -> u64;
}

macro_rules! seeded {
    ($($t:ty),*) => {$(
        impl Seeded for $t {
            fn set_seed(&mut self, seed: u64) { self.seed = seed; }
            fn seed(&self) -> u64 { self.seed }
        }
    )*};
}
seeded!(FitConfig, SimulateConfig, DownscaleConfig);

fn execute<T, F>(name: &str, args: &RunArgs, body: F) -> CliResult<()>
where
    T: Versioned + Seeded + Serialize + for<'de> serde::Deserialize<'de>,
    F: FnOnce(&T, &str, &Path) -> CliResult<Vec<PathBuf>>,
{
    let mut cfg: T = load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    let hash = config_hash(&cfg);
    ensure_dir(&args.out)?;
    if name == "simulate" {
        simulate::check_resume(&args.out, &hash)?;
    }
    let mut manifest = RunManifest::start(name, &args.config, hash.clone(), cfg.seed());
    manifest.write(&args.out)?;
    let result = body(&cfg, &hash, &args.out);
    manifest.finish(&result);
    manifest.write(&args.out)?;
    result.map(|_| ())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::Fit(a) => execute::<FitConfig, _>("fit", a, fit::run),
        Command::Simulate(a) => {
            execute::<SimulateConfig, _>("simulate", a, |c, _, o| simulate::run(c, o))
        }
        Command::Downscale(a) => {
            execute::<DownscaleConfig, _>("downscale", a, |c, _, o| downscale::run(c, o))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
