//! `mfglab` command-line driver: one config file in, one directory of
//! artifacts out. Failures write `error.json` into the output directory and
//! exit with status 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfglab::config::load_config;
use mfglab::dispatch::{dispatch, error_json, Command};
use mfglab::Error;

#[derive(Parser)]
#[command(
    name = "mfglab",
    version,
    about = "Discounted MFG and singular-limit experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment description (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides `solver.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Check coupling and Hamiltonian assumptions and the PSD test.
    ValidateModel,
    /// Solve the discounted MFG system at `model.lambda`.
    SolveMfg,
    /// Solve the aggregation limit (finite volumes and particles).
    SolveLimit,
    /// Minimize the acceleration energy at `model.lambda`.
    SolveAccel,
    /// Integrate the Cucker-Smale characteristics.
    SolveCs,
    /// Lambda sweep of the MFG system against the aggregation limit.
    SweepClassic,
    /// Lambda sweep of acceleration minimizers against Cucker-Smale.
    SweepAccel,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::ValidateModel => Command::ValidateModel,
            Cmd::SolveMfg => Command::SolveMfg,
            Cmd::SolveLimit => Command::SolveLimit,
            Cmd::SolveAccel => Command::SolveAccel,
            Cmd::SolveCs => Command::SolveCs,
            Cmd::SweepClassic => Command::SweepClassic,
            Cmd::SweepAccel => Command::SweepAccel,
        }
    }
}

fn run(cli: &Cli, cmd: Command) -> Result<Vec<PathBuf>, Error> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("--config PATH is required".into()))?;
    let mut cfg = load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.solver.seed = seed;
    }
    dispatch(cmd, &cfg, &cli.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = Command::from(cli.command);
    match run(&cli, cmd) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mfglab {}: {e}", cmd.name());
            let doc = error_json(Some(cmd), &e);
            if std::fs::create_dir_all(&cli.out).is_ok() {
                let _ = std::fs::write(cli.out.join("error.json"), &doc);
            }
            ExitCode::FAILURE
        }
    }
}
