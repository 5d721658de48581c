//! Batch front end for the evgrad pipeline.
//!
//! Seven subcommands cover the full loop: `synth` writes a labelled dataset,
//! `train` fits one model per skill, `calibrate` derives detection
//! thresholds, `identify`/`detect` run the online pass, `eval` re-scores
//! stored timelines, and `diag` dumps decoder diagnostics for one model.
//! Every command writes all artifacts under its own `--out` directory and
//! finishes with a `run-meta.json` echoing the configuration and hashing
//! the outputs, so runs can be compared byte for byte.
//!
//! Exit codes: 0 success, 2 usage error, 3 validation or input error,
//! 4 a threshold gate failed under `--assert`.

mod cmd_calibrate;
mod cmd_detect;
mod cmd_diag;
mod cmd_eval;
mod cmd_identify;
mod cmd_synth;
mod cmd_train;
mod reports;
mod support;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use support::Failure;

#[derive(Parser)]
#[command(
    name = "evgrad",
    version,
    about = "Skill identification and anomaly detection over observation streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

/// Flags shared by every subcommand; which of them are required depends on
/// the command and is checked after parsing.
#[derive(Args)]
struct Common {
    /// Master seed for data synthesis and training provenance.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory receiving this run's artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Dataset manifest to read trials from.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Write into an existing output directory.
    #[arg(long, global = true)]
    force: bool,

    /// Fail (exit 4) when a documented quality threshold is missed.
    #[arg(long = "assert", global = true)]
    assert_gates: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a named benchmark scenario: trials plus a manifest.
    Synth(cmd_synth::SynthArgs),
    /// Fit one model per skill from the manifest's training trials.
    Train(cmd_train::TrainArgs),
    /// Derive gradient and magnitude thresholds from training trials.
    Calibrate(cmd_calibrate::CalibrateArgs),
    /// Run per-step skill identification over test trials.
    Identify(cmd_identify::IdentifyArgs),
    /// Run identification plus anomaly detectors; write timelines and series.
    Detect(cmd_detect::DetectArgs),
    /// Re-score stored event timelines against ground truth.
    Eval(cmd_eval::EvalArgs),
    /// Dump decoder diagnostics for one skill model on one trial.
    Diag(cmd_diag::DiagArgs),
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap reports 2 for usage errors and 0 for --help/--version.
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Synth(args) => cmd_synth::run(&cli.common, &args),
        Command::Train(args) => cmd_train::run(&cli.common, &args),
        Command::Calibrate(args) => cmd_calibrate::run(&cli.common, &args),
        Command::Identify(args) => cmd_identify::run(&cli.common, &args),
        Command::Detect(args) => cmd_detect::run(&cli.common, &args),
        Command::Eval(args) => cmd_eval::run(&cli.common, &args),
        Command::Diag(args) => cmd_diag::run(&cli.common, &args),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            3
        }
        Err(Failure::Gate(reasons)) => {
            for r in &reasons {
                eprintln!("assert failed: {r}");
            }
            4
        }
    }
}
