use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use sigtrust_cli::commands;
use sigtrust_cli::config::{RunConfig, DATA_DIR_ENV};

/// Fraud detection on signed trust graphs.
#[derive(Debug, Parser)]
#[command(name = "sigtrust", version, about)]
struct Cli {
    /// TOML run configuration; every key has a default.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set train.max_epochs=50`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Directory holding the raw edge list.
    #[arg(long, global = true, env = DATA_DIR_ENV, value_name = "DIR")]
    data_dir: Option<PathBuf>,

    /// More log output; repeat for debug level.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and clean the edge list, then write the canonical graph.
    Ingest {
        /// Edge list; defaults to the configured data path.
        path: Option<PathBuf>,
        /// Output graph CSV; defaults to `<out_dir>/graph.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate benign and fraud labels from the trust structure.
    Label,
    /// Train the dual-channel model for each configured seed.
    Train {
        /// Train a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score checkpoints and baselines on the test split.
    Eval {
        /// Checkpoints to evaluate; defaults to one per configured seed.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
    },
    /// Retrain every configured ablation variant and compare.
    Ablate,
    /// Write learned embeddings and their 2-D projection.
    Export {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides, cli.data_dir)?;
    match cli.command {
        Command::Ingest { path, out } => commands::ingest(&cfg, path, out),
        Command::Label => commands::label(&cfg),
        Command::Train { seed } => commands::train(&cfg, seed),
        Command::Eval { checkpoints } => commands::eval(&cfg, &checkpoints),
        Command::Ablate => commands::ablate(&cfg),
        Command::Export { checkpoint } => commands::export(&cfg, checkpoint),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn category(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<sigtrust::Error>())
        .map_or("error", sigtrust::Error::category)
}

/// The context chain on one line, skipping causes already spelled out by the
/// error that wraps them.
fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out.replace('\n', " ").trim_end().to_string()
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
        Err(err) => {
            let message = message(&err);
            eprintln!("error[{}]: {message}", category(&err));
            ExitCode::FAILURE
        }
    }
}
