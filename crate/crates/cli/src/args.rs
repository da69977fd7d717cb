use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "qvec",
    version,
    about = "Extract, patch and evaluate quantization vectors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fake-quantize every rank-2 tensor of a checkpoint.
    Quantize(QuantizeArgs),
    /// Subtract a fine-tuned checkpoint from its QAT counterpart.
    ExtractQv(ExtractArgs),
    /// Add a scaled quantization vector to a receiver checkpoint.
    Patch(PatchArgs),
    /// Choose the patch scale on validation data and report the test gain.
    Sweep(SweepArgs),
    /// Top-1 accuracy of a checkpoint on a toy task split.
    Eval(EvalArgs),
    /// Train a toy MLP, with or without quantization-aware training.
    TrainToy(TrainArgs),
    /// Check the quadratic-model identities on random instances.
    VerifyGeometry(VerifyArgs),
    /// Donor FT/QAT, extraction, receiver FT, sweep and patch in one run.
    Pipeline(PipelineArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Quantize(_) => "quantize",
            Command::ExtractQv(_) => "extract-qv",
            Command::Patch(_) => "patch",
            Command::Sweep(_) => "sweep",
            Command::Eval(_) => "eval",
            Command::TrainToy(_) => "train-toy",
            Command::VerifyGeometry(_) => "verify-geometry",
            Command::Pipeline(_) => "pipeline",
        }
    }

    pub fn report_path(&self) -> Option<&Path> {
        let r = match self {
            Command::Quantize(a) => &a.report,
            Command::ExtractQv(a) => &a.report,
            Command::Patch(a) => &a.report,
            Command::Sweep(a) => &a.report,
            Command::Eval(a) => &a.report,
            Command::TrainToy(a) => &a.report,
            Command::VerifyGeometry(a) => &a.report,
            Command::Pipeline(a) => &a.report,
        };
        r.as_deref()
    }
}

#[derive(Debug, Clone, Args)]
pub struct QuantArgs {
    /// Bit width of the symmetric grid.
    #[arg(long, default_value_t = 3)]
    pub bits: u32,
    /// Glob of tensor names to leave untouched; repeatable. Defaults to the
    /// classifier head.
    #[arg(long = "exclude", value_name = "GLOB")]
    pub exclude: Vec<String>,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub quant: QuantArgs,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub qat: PathBuf,
    #[arg(long)]
    pub ft: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Glob of tensor names to leave out of the vector; repeatable.
    #[arg(long = "exclude", value_name = "GLOB")]
    pub exclude: Vec<String>,
    /// Accept a pair whose training configurations differ beyond the QAT flag.
    #[arg(long)]
    pub allow_config_mismatch: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PatchArgs {
    #[arg(long)]
    pub receiver: PathBuf,
    #[arg(long)]
    pub qv: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: f32,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub receiver: PathBuf,
    #[arg(long)]
    pub qv: PathBuf,
    #[arg(long)]
    pub task: String,
    /// Data seed; defaults to the one recorded in the receiver.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub quant: QuantArgs,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub task: String,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Data seed; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluate after fake quantization.
    #[arg(long)]
    pub ptq: bool,
    #[command(flatten)]
    pub quant: QuantArgs,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub qat: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Training configuration as JSON; unspecified fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bits: Option<u32>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,8,32,64")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub donor: String,
    #[arg(long)]
    pub receiver: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bits: Option<u32>,
    #[arg(long = "exclude", value_name = "GLOB")]
    pub exclude: Vec<String>,
    /// Directory for the intermediate and final checkpoints.
    #[arg(long, default_value = "qvec-out")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}
