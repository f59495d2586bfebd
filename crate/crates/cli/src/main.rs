//! `autoalign`: single entry point for every workflow.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use autoalign_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "autoalign",
    version,
    about = "Photon-pair source modelling and automated fiber alignment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration; omitted keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for independent trials (default: available cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Config override `block.key=value`; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Temperature sweep and biphoton wavefunction of the crystal.
    SpdcScan {
        #[command(flatten)]
        common: Common,
        /// Output directory (default runs/<timestamp>-spdc-scan).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One heuristic alignment from the start pose of trial 0.
    HaRun {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trace CSV (default <out>/trace.csv).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Trains the soft actor-critic agent.
    RlTrain {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory (default runs/<timestamp>-rl-train).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluates a checkpoint on paired starting poses.
    RlEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        /// Number of trials (default eval.trials).
        #[arg(long)]
        trials: Option<u64>,
        /// Trials CSV (default runs/<timestamp>-rl-eval/trials.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy-versus-time curve and AUC of a trials CSV.
    Roc {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        /// Curve CSV (default runs/<timestamp>-roc/curve.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Restrict to one policy (`heuristic` or `rl`); required for mixed files.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Paired heuristic-versus-agent campaign.
    Campaign {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<u64>,
        /// Use this checkpoint instead of training a new agent.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Maps an error to the documented process exit code.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Checkpoint(_)
        | Error::Input(_)
        | Error::Pairing(_)
        | Error::Domain { .. } => 2,
        Error::NoSignal { .. } => 3,
        Error::Numeric { .. } | Error::NonFinite(_) => 4,
        Error::State(_) | Error::Io { .. } | Error::Csv(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SpdcScan { common, out } => commands::spdc_scan(&common, out),
        Command::HaRun { common, out, trace } => commands::ha_run(&common, out, trace),
        Command::RlTrain { common, out } => commands::rl_train(&common, out),
        Command::RlEval {
            common,
            ckpt,
            trials,
            out,
        } => commands::rl_eval(&common, &ckpt, trials, out),
        Command::Roc {
            common,
            input,
            out,
            policy,
        } => commands::roc(&common, &input, out, policy),
        Command::Campaign {
            common,
            trials,
            ckpt,
            out,
        } => commands::campaign(&common, trials, ckpt, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
