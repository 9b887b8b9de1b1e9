use std::path::PathBuf;
use std::process::ExitCode;

use anchorcast::workflow::ArchMode;
use anchorcast::Mode;
use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;

use commands::{Ctx, ExportKind};
use config::{AdapterKind, RunConfig};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "anchorcast", version, about = "Ensemble-anchored agentic forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for snapshots, runs and corpora.
    #[arg(long, global = true, default_value = "anchorcast-out")]
    output: PathBuf,

    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,

    #[arg(long, global = true, value_enum)]
    arch: Option<ArchArg>,

    /// Seed for library, memory and rollout sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[arg(long, global = true, value_enum)]
    adapter: Option<AdapterArg>,

    /// Keep raw request/response pairs of the remote adapter in trajectories.
    #[arg(long, global = true)]
    debug_transcripts: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read a CSV into a dataset snapshot and report dropout per channel.
    Ingest {
        /// CSV file; overrides `[data] path`.
        csv: Option<PathBuf>,
    },
    /// Cluster training windows and score the model pool per cluster.
    BuildLibrary,
    /// Explore tool schedules on training windows and store the best.
    BuildMemory,
    /// Forecast every window of the selected split.
    Run,
    /// Write fine-tuning corpora.
    Export {
        #[arg(long, value_enum)]
        kind: KindArg,
    },
    /// Estimate the reward's gamma and nu on validation windows.
    Calibrate,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ArchArg {
    AgentOnly,
    AnchorerOnly,
    Full,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AdapterArg {
    Mock,
    Remote,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Sft,
    Rollouts,
}

fn context(cli: &Cli) -> Result<Ctx, CliError> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = cli.mode {
        config.run.mode = match m {
            ModeArg::Train => Mode::Train,
            ModeArg::Test => Mode::Test,
        };
    }
    if let Some(a) = cli.arch {
        config.workflow.arch = match a {
            ArchArg::AgentOnly => ArchMode::AgentOnly,
            ArchArg::AnchorerOnly => ArchMode::AnchorerOnly,
            ArchArg::Full => ArchMode::Full,
        };
    }
    if let Some(s) = cli.seed {
        config.reseed(s);
    }
    if let Some(w) = cli.workers {
        config.run.workers = w;
    }
    if let Some(a) = cli.adapter {
        config.adapter.kind = match a {
            AdapterArg::Mock => AdapterKind::Mock,
            AdapterArg::Remote => AdapterKind::Remote,
        };
    }
    Ok(Ctx { config, config_path: cli.config.clone(), output: cli.output.clone(), debug_transcripts: cli.debug_transcripts })
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let ctx = context(cli)?;
    match &cli.command {
        Command::Ingest { csv } => commands::ingest(&ctx, csv.as_deref()),
        Command::BuildLibrary => commands::build_library(&ctx),
        Command::BuildMemory => commands::build_memory(&ctx),
        Command::Run => commands::run(&ctx).map(|_| ()),
        Command::Export { kind } => {
            let kind = match kind {
                KindArg::Sft => ExportKind::Sft,
                KindArg::Rollouts => ExportKind::Rollouts,
            };
            commands::export(&ctx, kind).map(|_| ())
        }
        Command::Calibrate => commands::calibrate_reward(&ctx).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
