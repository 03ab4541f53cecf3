//! The `pdeseg` command line: `gen`, `solve`, `train`, `eval` and `sweep`,
//! each driven by a JSON run configuration.
//!
//! Exit codes: 0 success, 1 configuration error, 2 I/O or file-format error,
//! 3 numerical divergence.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<pdeseg::Error> for CliError {
    fn from(e: pdeseg::Error) -> Self {
        use pdeseg::Error as E;
        let code = match &e {
            E::InvalidArgument(_) | E::DimensionMismatch { .. } => 1,
            E::Parse { .. } | E::Io(_) | E::Json(_) => 2,
            E::Divergence { .. } => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pdeseg", version, about = "Segmentation with reaction-diffusion and phase-field priors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides the config's `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replaces every seed in the configuration.
    #[arg(long)]
    pub seed_override: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    Gen(CommonArgs),
    /// Fit a field directly to one mask.
    Solve(CommonArgs),
    /// Train the network with the two-stage schedule.
    Train(CommonArgs),
    /// Score a trained network on corpus splits.
    Eval(CommonArgs),
    /// Run harness experiments and summarize them.
    Sweep(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Solve(_) => "solve",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Sweep(_) => "sweep",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Gen(a) | Command::Solve(a) | Command::Train(a) | Command::Eval(a) | Command::Sweep(a) => a,
        }
    }
}

/// Runs an already-parsed command.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let args = cli.command.args();
    let name = cli.command.name();
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply_seed(args.seed_override);
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::config("no output directory: pass --out or set `out` in the config"))?;

    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = args.jobs {
            if j == 0 {
                return Err(CliError::config("--jobs must be at least 1"));
            }
            b = b.num_threads(j);
        }
        b.build().map_err(|e| CliError::config(format!("cannot start worker pool: {e}")))?
    };

    pool.install(|| {
        commands::prepare_out(&out)?;
        match &cli.command {
            Command::Gen(_) => commands::gen(&cfg, &out),
            Command::Solve(_) => commands::solve(&cfg, &out),
            Command::Train(_) => commands::train(&cfg, &out),
            Command::Eval(_) => commands::eval(&cfg, &out),
            Command::Sweep(_) => commands::sweep(&cfg, &out),
        }?;
        commands::write_file(&out.join("config.json"), cfg.echo(name)?.as_bytes())
    })
}

/// Entry point shared by the binary and the tests: parses `argv`, runs,
/// reports errors on stderr and returns the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
