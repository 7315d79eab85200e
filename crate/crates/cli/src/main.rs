//! `r3d`: generate CSI datasets, measure coherence, train and evaluate the
//! masked encoder–decoder, and export phase probes.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use r3d_core::coherence::Axis;
use r3d_core::dataset::Split;
use r3d_core::posenc::{PeVariant, Stage};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<r3d_core::Error> for CliError {
    fn from(e: r3d_core::Error) -> Self {
        match e {
            r3d_core::Error::InvalidConfig { .. } | r3d_core::Error::AlreadyExists(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "r3d", version, about = "3D rotary positional encodings for CSI transformers")]
pub struct Cli {
    /// Worker threads for sample-parallel work.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Reduce gradients in whatever order workers finish.
    #[arg(long, global = true)]
    pub nondeterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the datasets listed under [gen].
    Gen {
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Replace existing dataset files.
        #[arg(long)]
        force: bool,
    },
    /// Per-axis autocorrelation of a dataset, as CSV.
    Acf {
        dataset: PathBuf,
        #[arg(long, value_parser = parse_axis)]
        axis: Axis,
        #[arg(long)]
        max_lag: usize,
        #[arg(long)]
        out: PathBuf,
        /// Threshold for the printed coherence extents.
        #[arg(long, default_value_t = 0.5)]
        eta: f64,
        /// Restrict to one split (default: every sample).
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
    },
    /// Train per [train], [model] and [optim].
    Train {
        config: PathBuf,
        #[arg(long, value_parser = parse_variant)]
        pe: Option<PeVariant>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on every dataset matching a glob.
    Eval {
        checkpoint: PathBuf,
        dataset_glob: String,
        /// random, temporal, frequency or all.
        #[arg(long, default_value = "all")]
        task: String,
        #[arg(long, value_parser = parse_split, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
        /// Mask seed (default: the training seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Head-wise phase probe over (dt, dk, du) offsets, as CSV.
    Probe {
        /// Trained checkpoint; omit to probe a freshly initialized bank.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_variant, default_value = "rope3d_adaptive")]
        pe: PeVariant,
        #[arg(long, default_value_t = 16)]
        head_dim: usize,
        #[arg(long, default_value_t = 2)]
        heads: usize,
        #[arg(long, default_value_t = r3d_core::posenc::DEFAULT_ROPE_BASE)]
        rope_base: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_stage, default_value = "encoder")]
        stage: Stage,
        /// One head; every head when omitted.
        #[arg(long)]
        head: Option<usize>,
        /// Offsets span -radius..=radius along t and k.
        #[arg(long, default_value_t = 10)]
        radius: i64,
        /// Fixed spatial offset.
        #[arg(long, default_value_t = 0)]
        du: i64,
        /// Use the sample-adapted frequencies of this dataset's first test sample.
        #[arg(long)]
        adapted_from: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also dump the bank as CSV.
        #[arg(long)]
        bank_out: Option<PathBuf>,
    },
    /// Summarize run manifests per positional-encoding variant.
    Compare {
        #[arg(required = true)]
        manifests: Vec<String>,
        /// Variant the delta column is measured against.
        #[arg(long, value_parser = parse_variant)]
        reference: Option<PeVariant>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_axis(s: &str) -> Result<Axis, String> {
    s.parse().map_err(|e: r3d_core::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<PeVariant, String> {
    s.parse().map_err(|e: r3d_core::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(format!("expected train, val or test, got {s:?}")),
    }
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    match s {
        "encoder" | "enc" => Ok(Stage::Encoder),
        "decoder" | "dec" => Ok(Stage::Decoder),
        _ => Err(format!("expected encoder or decoder, got {s:?}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(e.code());
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn rayon_threads(n: usize) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    commands::init_threads(n)
}
