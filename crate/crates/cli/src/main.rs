//! Command-line entry point: dataset generation, training, evaluation,
//! model comparison, and gradient verification, each reproducible from
//! its printed effective-config line.
//!
//! Exit codes: 0 ok, 1 usage error, 2 verification failure, 3 IO error.

mod commands;
mod config;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use opfusion_core::{Error, InitMode, Variant};

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }

    pub fn verification(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError { code: 3, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. }
            | Error::Malformed { .. }
            | Error::TruncatedBlob { .. }
            | Error::VersionMismatch { .. } => 3,
            Error::Shape { .. } | Error::Precondition { .. } | Error::NonFinite { .. } => 2,
        };
        CliError { code, message: e.to_string() }
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::ALL
        .into_iter()
        .find(|v| v.as_str() == s)
        .ok_or_else(|| {
            let names: Vec<&str> = Variant::ALL.iter().map(|v| v.as_str()).collect();
            format!("unknown model `{s}` (expected one of: {})", names.join(", "))
        })
}

fn parse_init(s: &str) -> Result<InitMode, String> {
    match s {
        "random" => Ok(InitMode::Random),
        "from-checkpoints" => Ok(InitMode::FromCheckpoints),
        other => Err(format!(
            "unknown init mode `{other}` (expected `random` or `from-checkpoints`)"
        )),
    }
}

#[derive(Parser)]
#[command(
    name = "opfusion",
    about = "Multi-modal person detection: synthetic data, training, evaluation",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic visual+seismic dataset directory
    GenData(GenDataArgs),
    /// Train one model variant and write a checkpoint plus history CSV
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset's test split
    Eval(EvalArgs),
    /// Train and evaluate every variant plus late-fusion baselines
    Compare(CompareArgs),
    /// Finite-difference verification of every analytic gradient
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output dataset directory
    #[arg(long)]
    out: String,
    /// Number of training windows
    #[arg(long)]
    train: Option<usize>,
    /// Number of test windows
    #[arg(long)]
    test: Option<usize>,
    /// Generation seed
    #[arg(long)]
    seed: Option<u64>,
    /// Config file with `key = value` overrides
    #[arg(long)]
    config: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory from gen-data
    #[arg(long)]
    data: String,
    /// Output directory for checkpoint and history
    #[arg(long)]
    out: String,
    /// Model variant
    #[arg(long, value_parser = parse_variant)]
    model: Option<Variant>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// L1 weight on the reduction layers
    #[arg(long)]
    l1: Option<f64>,
    /// Minibatch size
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Parameter initialization: random | from-checkpoints
    #[arg(long, value_parser = parse_init)]
    init: Option<InitMode>,
    /// Visual-only donor checkpoint for --init from-checkpoints
    #[arg(long)]
    visual_init: Option<String>,
    /// Seismic-only donor checkpoint for --init from-checkpoints
    #[arg(long)]
    seismic_init: Option<String>,
    #[arg(long)]
    config: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory from gen-data
    #[arg(long)]
    data: String,
    /// Checkpoint to evaluate
    #[arg(long)]
    ckpt: String,
    /// Output directory for metrics CSV and PR SVG
    #[arg(long)]
    out: String,
    /// Decision threshold on the positive-class confidence
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    config: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    /// Dataset directory from gen-data
    #[arg(long)]
    data: String,
    /// Output directory for the comparison report
    #[arg(long)]
    out: String,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    l1: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Dempster-Shafer uncertainty mass for the visual modality
    #[arg(long)]
    ds_uncertainty_visual: Option<f64>,
    /// Dempster-Shafer uncertainty mass for the seismic modality
    #[arg(long)]
    ds_uncertainty_seismic: Option<f64>,
    #[arg(long)]
    config: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict the check to one variant (default: all seven)
    #[arg(long, value_parser = parse_variant)]
    model: Option<Variant>,
    #[arg(long)]
    config: Option<String>,
}

fn main() {
    // restore default SIGPIPE so `opfusion ... | head` terminates quietly
    // instead of panicking on a closed stdout
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return 1;
        }
    };
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data(args),
        Command::Train(args) => commands::train_cmd(args),
        Command::Eval(args) => commands::eval_cmd(args),
        Command::Compare(args) => commands::compare_cmd(args),
        Command::Gradcheck(args) => commands::gradcheck_cmd(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
