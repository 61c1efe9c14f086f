//! `pnmn` command-line driver. Each subcommand resolves a [`RunConfig`],
//! writes it next to its outputs and returns an exit code through
//! [`exit_code`]: 0 success, 1 internal failure, 2 user or config error.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::RunConfig;

/// Bad input from the user: config, paths, data. Maps to exit code 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<pnmn_core::Error>() {
        Some(
            pnmn_core::Error::InvalidArgument(_)
            | pnmn_core::Error::Parse { .. }
            | pnmn_core::Error::Io { .. }
            | pnmn_core::Error::Json(_),
        ) => 2,
        _ => 1,
    }
}

#[derive(Debug, Parser)]
#[command(name = "pnmn", version, about = "Plastic neural memory network: train, evaluate, analyse")]
pub struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` run configuration.
    #[arg(short, long)]
    pub config: Option<PathBuf>,

    /// Override one config key, e.g. `--set epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig, UsageError> {
        RunConfig::resolve(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleArg {
    Native,
    #[cfg(feature = "quad")]
    Quad,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes checkpoint.json, metrics.csv and resolved_config.txt.
    Train(ConfigArgs),
    /// Score a checkpoint and print metrics JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset manifest; without it the config's test data is used.
        #[arg(long)]
        data: Option<PathBuf>,
        /// The data CSVs start with a header row.
        #[arg(long)]
        header: bool,
        /// Aggregate windows by record id before scoring.
        #[arg(long)]
        vote: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// One-at-a-time sweep over `sweep_k`, `sweep_l` and `sweep_eta`.
    Sweep(ConfigArgs),
    /// Finite-difference check of a small randomly initialised model.
    Gradcheck {
        #[arg(long, default_value = "plastic")]
        kind: pnmn_core::MemoryKind,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 2)]
        l: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 3)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Precision of the finite-difference side.
        #[cfg_attr(feature = "quad", arg(long, value_enum, default_value = "quad"))]
        #[cfg_attr(not(feature = "quad"), arg(long, value_enum, default_value = "native"))]
        oracle: OracleArg,
    },
    /// Snapshot matrices before and after the test data, plus embeddings.
    Export {
        /// Defaults to `<out_dir>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Time forward passes over the `bench_l` and `bench_k` grids.
    Bench(ConfigArgs),
    /// Write the configured synthetic train and test sets as CSV + manifest.
    GenData(ConfigArgs),
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(args) => commands::train(&args.resolve()?),
        Command::Eval {
            checkpoint,
            data,
            header,
            vote,
            config,
        } => commands::eval(&checkpoint, data.as_deref(), header, vote, &config.resolve()?),
        Command::Sweep(args) => commands::sweep(&args.resolve()?),
        Command::Gradcheck {
            kind,
            k,
            l,
            d,
            steps,
            seed,
            h,
            tol,
            oracle,
        } => commands::gradcheck(
            &commands::GradcheckSpec {
                kind,
                k,
                l,
                d,
                steps,
                seed,
                h,
                tol,
            },
            match oracle {
                OracleArg::Native => pnmn_core::Oracle::Native,
                #[cfg(feature = "quad")]
                OracleArg::Quad => pnmn_core::Oracle::Quad,
            },
        ),
        Command::Export { checkpoint, config } => commands::export(checkpoint.as_deref(), &config.resolve()?),
        Command::Bench(args) => commands::bench(&args.resolve()?),
        Command::GenData(args) => commands::gen_data(&args.resolve()?),
    }
}
