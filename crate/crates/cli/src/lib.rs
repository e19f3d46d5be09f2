//! Command-line front end: segment a directory, evaluate against ground
//! truth, sweep ablations, and serve the mock backend over HTTP.

pub mod commands;
pub mod config;
pub mod server;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("backend unreachable: {0}")]
    Backend(String),
    #[error("{failed} of {total} images failed")]
    Partial { failed: usize, total: usize },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Other(_) => 1,
            CliError::Backend(_) => 2,
            CliError::Partial { .. } => 3,
        }
    }
}

impl From<eviprompt::Error> for CliError {
    fn from(e: eviprompt::Error) -> Self {
        use eviprompt::Error as E;
        match e.root() {
            E::Transport(_) | E::Session(_) => CliError::Backend(e.to_string()),
            E::MissingFiles(_) | E::Format { .. } | E::Io { .. } => CliError::Config(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "eviprompt", version, about = "Point-prompt generation from a single annotated reference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// `mock` or a bridge base URL; overrides the config and the environment.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Overrides `io.output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Common {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            backend: self.backend.clone(),
            seed: self.seed,
            jobs: self.jobs,
            output_dir: self.out.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    PatchSize,
    Anchors,
    Component,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::PatchSize => "patch_size",
            SweepAxis::Anchors => "anchors",
            SweepAxis::Component => "component",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.replace('-', "_").as_str() {
            "patch_size" => Ok(SweepAxis::PatchSize),
            "anchors" => Ok(SweepAxis::Anchors),
            "component" => Ok(SweepAxis::Component),
            _ => Err(CliError::Config(format!(
                "unknown sweep axis {s:?}; expected patch_size, anchors or component"
            ))),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment every target and write masks plus JSON sidecars.
    Run(Common),
    /// Evaluate the configured method against ground truth.
    Eval(Common),
    /// Evaluate one ablation axis and write a CSV.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sweep: String,
        /// Comma-separated settings; `NxM` pairs for anchors.
        #[arg(long)]
        values: Option<String>,
    },
    /// Write a synthetic dataset and manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Serve the mock backend over the wire protocol.
    ServeMock {
        #[arg(long, default_value = "127.0.0.1:8765")]
        addr: String,
    },
}

pub fn run_cli(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(c) => commands::cmd_run(&commands::load_config(&c)?),
        Command::Eval(c) => commands::cmd_eval(&commands::load_config(&c)?).map(|_| ()),
        Command::Ablate { common, sweep, values } => {
            let axis: SweepAxis = sweep.parse()?;
            commands::cmd_ablate(&commands::load_config(&common)?, axis, values.as_deref()).map(|_| ())
        }
        Command::Synth { out, n, seed } => commands::cmd_synth(&out, n, seed),
        Command::ServeMock { addr } => commands::cmd_serve_mock(&addr),
    }
}
