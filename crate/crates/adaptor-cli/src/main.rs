//! `adaptor` — synthetic caches, contrastive pre-training, frozen-adaptor
//! evaluation, artifact inspection.
//!
//! Exit codes: `0` success, `2` validation/parse failure, `3` numeric
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use adaptor_cli::commands;
use adaptor_cli::error::CliError;
use adaptor_core::data::Split;
use adaptor_core::eval::{ProbeConfig, PROBE_EPOCHS_DEFAULT, PROBE_LR_DEFAULT};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "adaptor",
    version,
    about = "Frozen-backbone vision-language adaptor: cache generation, pre-training, evaluation",
    long_about = None
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic embedding cache: train/val/test ADPC files
    /// (80/10/10) plus a manifest.
    Synth {
        /// Path to the SynthSpec JSON file.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory (append-only; --force overwrites).
        #[arg(long)]
        out: PathBuf,
        /// Overwrite existing artifacts in the output directory.
        #[arg(long)]
        force: bool,
    },
    /// Pre-train the adaptor on a cache; writes checkpoint.adpk,
    /// metrics.jsonl, and a verbatim config echo.
    Pretrain {
        /// Path to the run-config JSON file.
        #[arg(long)]
        config: PathBuf,
        /// Training cache: a synth output directory or a train .adpc file.
        #[arg(long)]
        cache: PathBuf,
        /// Output directory (append-only; --force overwrites).
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint; only the epoch target may differ
        /// from its recorded configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overwrite existing artifacts in the output directory.
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a frozen checkpoint: retrieval, linear probe, separability.
    Eval {
        /// Path to the checkpoint (.adpk).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluation cache: a synth output directory (probe trains on
        /// train.adpc, metrics measured on test.adpc) or a single .adpc
        /// file used for both.
        #[arg(long)]
        cache: PathBuf,
        /// Fraction of probe-training labels to use (stratified).
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        /// Comma-separated recall cutoffs.
        #[arg(long, default_value = "1,5,10")]
        ks: String,
        /// Probe hidden width.
        #[arg(long, default_value_t = 64)]
        probe_hidden: usize,
        /// Probe training epochs.
        #[arg(long, default_value_t = PROBE_EPOCHS_DEFAULT)]
        probe_epochs: usize,
        /// Probe learning rate.
        #[arg(long, default_value_t = PROBE_LR_DEFAULT)]
        probe_lr: f64,
        /// Probe init/subset seed.
        #[arg(long, default_value_t = 0)]
        probe_seed: u64,
        /// Also write report.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite an existing report.json.
        #[arg(long)]
        force: bool,
    },
    /// Print header fields, counts, and checksum status of an artifact.
    Inspect {
        /// Path to an .adpc or .adpk file.
        #[arg(long)]
        path: PathBuf,
    },
    /// Convert a plain-text embedding dump (`id label <image floats> |
    /// <text floats>` per line) into an ADPC cache.
    Import {
        /// Path to the text file.
        #[arg(long)]
        text: PathBuf,
        /// Output .adpc file.
        #[arg(long)]
        out: PathBuf,
        /// Split tag to record: train, val, or test.
        #[arg(long, default_value = "train")]
        split: String,
        /// Overwrite an existing output file.
        #[arg(long)]
        force: bool,
    },
}

fn parse_ks(ks: &str) -> Result<Vec<usize>, CliError> {
    let parsed: Result<Vec<usize>, _> =
        ks.split(',').map(|s| s.trim().parse::<usize>()).collect();
    let parsed =
        parsed.map_err(|e| CliError::invalid(format!("bad --ks value {ks:?}: {e}")))?;
    if parsed.is_empty() {
        return Err(CliError::invalid("--ks needs at least one cutoff"));
    }
    Ok(parsed)
}

fn parse_split(name: &str) -> Result<Split, CliError> {
    match name {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(CliError::invalid(format!(
            "unknown split {other:?}, want train, val, or test"
        ))),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Synth { spec, out, force } => commands::cmd_synth(&spec, &out, force),
        Cmd::Pretrain { config, cache, out, resume, force } => {
            commands::cmd_pretrain(&config, &cache, &out, resume.as_deref(), force)
        }
        Cmd::Eval {
            checkpoint,
            cache,
            fraction,
            ks,
            probe_hidden,
            probe_epochs,
            probe_lr,
            probe_seed,
            out,
            force,
        } => {
            let probe = ProbeConfig {
                hidden_dim: probe_hidden,
                lr: probe_lr,
                epochs: probe_epochs,
                data_fraction: fraction,
                seed: probe_seed,
            };
            let ks = parse_ks(&ks)?;
            commands::cmd_eval(&checkpoint, &cache, probe, &ks, out.as_deref(), force)
        }
        Cmd::Inspect { path } => commands::cmd_inspect(&path),
        Cmd::Import { text, out, split, force } => {
            commands::cmd_import(&text, &out, parse_split(&split)?, force)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
