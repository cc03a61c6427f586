//! Front end of the `dflab` binary: config parsing, run orchestration and
//! report emission.

pub mod commands;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{Overrides, RunConfig, OUTPUT_DIR_ENV};
use crate::output::{Metadata, OutDir};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_CLAIM: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) | CliError::Io { .. } => EXIT_NUMERIC,
        }
    }
}

impl From<dflab::Error> for CliError {
    fn from(e: dflab::Error) -> Self {
        match e {
            dflab::Error::Config(msg) => CliError::Config(msg),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dflab", version, about = "Dirac-Fock and electron-positron Hartree-Fock on finite discretizations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output root; overrides `OUTPUT_DIR` and `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for every random draw; overrides `seed`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Comma-separated claim ids for `verify`.
    #[arg(long, global = true, value_name = "LIST")]
    pub claims: Option<String>,
    /// Worker pool size for sweeps and claims.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Minimize the DF energy.
    SolveDf,
    /// Minimize the ep-HF energy in the sea chosen by `solver.sea`.
    SolveEphf,
    /// Run the max-min loop over seas.
    Mittleman,
    /// Run the claim checks.
    Verify,
    /// Energies and the gap along the `[sweep]` grid.
    Sweep,
    /// Write the model operators as text.
    DumpModel,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SolveDf => "solve-df",
            Command::SolveEphf => "solve-ephf",
            Command::Mittleman => "mittleman",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
            Command::DumpModel => "dump-model",
        }
    }
}

/// Runs one invocation and returns the process exit code.
pub fn run(cli: &Cli, argv: Vec<String>) -> i32 {
    let started = output::unix_ms();
    let cfg = match load(cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("dflab: {e}");
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.output.workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("dflab: cannot start the worker pool: {e}");
            return EXIT_NUMERIC;
        }
    };
    let out = match OutDir::create(&cfg.output.dir, cli.command.name()) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("dflab: {e}");
            return e.exit_code();
        }
    };
    let code = match pool.install(|| commands::dispatch(cli.command, &cfg, &out)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("dflab: {e}");
            e.exit_code()
        }
    };
    let finished = output::unix_ms();
    let meta = Metadata {
        command: cli.command.name().to_string(),
        argv,
        started_unix_ms: started,
        finished_unix_ms: finished,
        elapsed_ms: finished.saturating_sub(started),
        output_dir: cfg.output.dir.clone(),
        workers: cfg.output.workers,
        exit_code: code,
    };
    if let Err(e) = out.write_json("metadata.json", &meta) {
        eprintln!("dflab: {e}");
        return code.max(EXIT_NUMERIC);
    }
    code
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let claims = cli.claims.as_deref().map(config::parse_claims).transpose()?;
    let ov = Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
        claims,
        workers: cli.workers,
        env_out: std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from),
    };
    RunConfig::load(path, &ov)
}
