mod commands;
mod grid;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use depth_halluc::training::Mode;

#[derive(Parser)]
#[command(name = "depth-halluc", version)]
#[command(about = "Hallucinate depth maps from single RGB images with a teacher-student GAN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the shared generator on paired RGB-D and unpaired RGB data.
    Train(TrainArgs),
    /// Write one depth PNG per input RGB image.
    Hallucinate(HallucinateArgs),
    /// Score hallucinated depth against ground truth.
    EvalQuality(EvalQualityArgs),
    /// Rank-1 identification with RGB, hallucinated depth and their fusions.
    EvalRecognition(EvalRecognitionArgs),
    /// Render a synthetic paired RGB-D dataset.
    MakeSynthetic(MakeSyntheticArgs),
    /// Write an n x 4 grid: RGB, ground-truth depth, hallucinated depth, reconstruction.
    ExportSamples(ExportSamplesArgs),
}

/// Output location shared by every command.
#[derive(Args, Clone)]
pub struct OutArgs {
    /// Run directory; defaults to `<DEPTH_HALLUC_OUT>/<command>-<hash>`.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Root for default run directories.
    #[arg(long, env = "DEPTH_HALLUC_OUT", default_value = "runs", hide_env_values = true)]
    pub out_root: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Per-key override, repeatable; applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,

    #[arg(long)]
    pub epochs: Option<usize>,

    /// Root of the paired RGB-D dataset.
    #[arg(long)]
    pub teacher_data: PathBuf,

    /// Root of the RGB-only dataset; required in full mode.
    #[arg(long)]
    pub target_data: Option<PathBuf>,

    /// Resume from this checkpoint directory instead of the run's latest.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args)]
pub struct HallucinateArgs {
    /// Generator archive, checkpoint directory or training run directory.
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Directory of RGB images.
    #[arg(long)]
    pub input: PathBuf,

    /// Side length images are resized to; defaults to the checkpoint's training size.
    #[arg(long)]
    pub image_size: Option<usize>,

    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args)]
pub struct EvalQualityArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Root of a paired RGB-D dataset.
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long)]
    pub image_size: Option<usize>,

    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args)]
pub struct EvalRecognitionArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Root of an RGB dataset with identity-prefixed file names.
    #[arg(long)]
    pub data: PathBuf,

    /// Separate probe set; without it `--folds` cross-validation runs on `--data`.
    #[arg(long)]
    pub test_data: Option<PathBuf>,

    #[arg(long, default_value_t = 5)]
    pub folds: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Training epochs of each reference CNN.
    #[arg(long, default_value_t = 15)]
    pub cnn_epochs: usize,

    #[arg(long)]
    pub image_size: Option<usize>,

    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args)]
pub struct MakeSyntheticArgs {
    #[arg(long, default_value_t = 200)]
    pub samples: usize,

    #[arg(long, default_value_t = 64)]
    pub size: usize,

    #[arg(long, default_value_t = 20)]
    pub identities: usize,

    #[arg(long, default_value_t = 7)]
    pub seed: u64,

    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args)]
pub struct ExportSamplesArgs {
    /// Checkpoint directory or training run directory.
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Root of a paired RGB-D dataset; the first `--count` samples are used.
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long, default_value_t = 4)]
    pub count: usize,

    #[arg(long)]
    pub image_size: Option<usize>,

    #[command(flatten)]
    pub out: OutArgs,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: depth_halluc::Error| e.to_string())
}

/// Bad invocations and configurations exit with 2, runtime faults with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|c| {
        c.downcast_ref::<depth_halluc::Error>()
            .is_some_and(depth_halluc::Error::is_usage)
    });
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Hallucinate(a) => commands::hallucinate(a),
        Command::EvalQuality(a) => commands::eval_quality(a),
        Command::EvalRecognition(a) => commands::eval_recognition(a),
        Command::MakeSynthetic(a) => commands::make_synthetic(a),
        Command::ExportSamples(a) => commands::export_samples(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
