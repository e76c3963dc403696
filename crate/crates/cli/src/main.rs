//! `lidnet`: feature extraction, training, evaluation and single-file
//! prediction for the spoken language identifier.
//!
//! Any `--section.key VALUE` (or `--section.key=VALUE`) argument overrides
//! the matching config key, e.g. `--train.seed 7`.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lidnet::LidError;

#[derive(Debug, Parser)]
#[command(name = "lidnet", version, about = "Spoken language identification")]
struct Cli {
    /// Run configuration (`key = value` lines)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides `train.seed`
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Threads for feature extraction and loading
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute LIDF log-mel features for every manifest entry
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a model and write the best checkpoint
    Train {
        /// Checkpoint to write; history and effective config go next to it
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a manifest and write metrics and confusion reports
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report_dir: PathBuf,
    },
    /// Class probabilities for one WAV or LIDF file
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
    },
}

/// Process exit status for each failure class.
fn exit_code(err: &LidError) -> u8 {
    match err {
        LidError::Config(_) => 1,
        LidError::Numeric { .. } => 3,
        _ => 2,
    }
}

/// Splits `--section.key value` overrides out of the raw arguments.
fn split_overrides(args: Vec<OsString>) -> Result<(Vec<OsString>, Vec<(String, String)>), String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let Some(flag) = arg.to_str().and_then(|s| s.strip_prefix("--")).filter(|s| {
            let name = s.split('=').next().unwrap_or_default();
            name.contains('.') && !name.starts_with('.')
        }) else {
            rest.push(arg);
            continue;
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let value = iter
                    .next()
                    .and_then(|v| v.into_string().ok())
                    .ok_or_else(|| format!("--{flag} needs a value"))?;
                (flag.to_string(), value)
            }
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let (args, overrides) = match split_overrides(std::env::args_os().collect()) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let opts = commands::GlobalOpts {
        config: cli.config,
        seed: cli.seed,
        workers: cli.workers.max(1),
        overrides,
    };
    let result = match cli.command {
        Command::Extract { manifest, out_dir } => commands::extract(&opts, &manifest, &out_dir),
        Command::Train { out } => commands::train(&opts, &out),
        Command::Eval {
            checkpoint,
            manifest,
            report_dir,
        } => commands::eval(&opts, &checkpoint, &manifest, &report_dir),
        Command::Predict { checkpoint, input } => commands::predict(&opts, &checkpoint, &input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
