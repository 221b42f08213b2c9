//! Command-line front end: `train`, `eval`, `gradcheck`, `energy`, `report`
//! and `serve-env`.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{Network, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("environment error: {0}")]
    Env(String),
    #[error("{0}")]
    Failed(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Train(#[from] snn_actor::td3::Td3Error),
    #[error(transparent)]
    Checkpoint(#[from] snn_actor::checkpoint::CheckpointError),
    #[error(transparent)]
    Energy(#[from] snn_actor::energy::EnergyError),
    #[error(transparent)]
    Actor(#[from] snn_actor::actor::ActorError),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "snn-actor", version, about = "Spiking actor networks trained with TD3")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed list with a single seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Bitwise-reproducible mode (wall-clock columns written as zero).
    #[arg(long, global = true)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one actor per seed.
    Train(TrainArgs),
    /// Evaluate a checkpoint with the deterministic policy.
    Eval(EvalArgs),
    /// Compare analytic gradients with the graph oracle and finite differences.
    Gradcheck(GradcheckArgs),
    /// Count operations and estimate energy per inference.
    Energy(EnergyArgs),
    /// Summarize run directories: best-evaluation mean±std and APR.
    Report(ReportArgs),
    /// Serve a built-in environment over the line-delimited JSON protocol.
    ServeEnv(ServeArgs),
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long, value_enum)]
    pub network: Option<Network>,
    #[arg(long)]
    pub total_steps: Option<u64>,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Network size profile: tiny or small.
    #[arg(long, default_value = "tiny")]
    pub profile: String,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Test hook: scales the surrogate derivative in the hand-written backward pass.
    #[arg(long, hide = true)]
    pub corrupt_derivative: bool,
}

#[derive(Debug, Args)]
pub struct EnergyArgs {
    /// Checkpoint to audit by running one episode.
    #[arg(long, conflicts_with = "rates")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<String>,
    /// Firing-rate table (`layer,fr` CSV or JSON report) for table-only mode.
    #[arg(long)]
    pub rates: Option<PathBuf>,
    /// Task preset supplying observation/action sizes in table-only mode.
    #[arg(long)]
    pub task: Option<String>,
    /// Architecture for table-only mode: ilc_san, popsan or dense.
    #[arg(long, default_value = "ilc_san")]
    pub arch: String,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories (a training output directory or a single seed directory).
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    /// Baseline run directories for the performance ratio.
    #[arg(long, num_args = 1..)]
    pub baseline: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "pendulum")]
    pub env: String,
    /// Address to listen on; without it requests are read from standard input.
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub max_connections: Option<usize>,
}

/// Resolves the configuration from `--config` and global overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.run.out = out.clone();
    }
    if cli.strict {
        cfg.run.strict = true;
    }
    Ok(cfg)
}

/// Runs a parsed command line; output goes to `stdout`, warnings to `stderr`.
pub fn run(cli: Cli, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> Result<(), CliError> {
    let mut cfg = resolve_config(&cli)?;
    match cli.command {
        Command::Train(args) => commands::train(&mut cfg, &args, stdout),
        Command::Eval(args) => commands::eval(&mut cfg, &args, stdout),
        Command::Gradcheck(args) => commands::gradcheck(&cfg, &args, stdout, stderr),
        Command::Energy(args) => commands::energy(&mut cfg, &args, cli.out.is_some(), stdout),
        Command::Report(args) => commands::report(&cfg, &args, cli.out.is_some(), stdout, stderr),
        Command::ServeEnv(args) => commands::serve_env(&args),
    }
}
