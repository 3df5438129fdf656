//! `pffnet`: haze synthesis, patch building, training, ablation, dehazing,
//! evaluation and gradient checking.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit status for operational failures; usage errors exit with 2.
const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "pffnet", version, about = "Progressive feature fusion dehazing network")]
struct Cli {
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize hazy images from clear images and depth maps.
    Synth(SynthArgs),
    /// Build a patch manifest from paired hazy and clear images.
    Patches(PatchesArgs),
    /// Train a network and write checkpoints plus a metric log.
    Train(TrainArgs),
    /// Train one network per architecture variant and write their curves.
    Ablate(AblateArgs),
    /// Dehaze an image, or every image of a directory.
    Dehaze(DehazeArgs),
    /// Score restored images against references (PSNR and SSIM).
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory of clear images.
    #[arg(long)]
    clear: PathBuf,
    /// Directory of single-channel depth maps with the same file stems.
    #[arg(long)]
    depth: PathBuf,
    /// Output directory for hazy PNGs and params.tsv.
    #[arg(long)]
    out: PathBuf,
    /// Run seed; each image's parameters come from a seed derived from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
pub struct PatchesArgs {
    /// Directory of hazy images.
    #[arg(long)]
    hazy: PathBuf,
    /// Directory of clear images with the same file stems.
    #[arg(long)]
    clear: PathBuf,
    /// Output directory; the manifest is written to <out>/manifest.tsv.
    #[arg(long)]
    out: PathBuf,
    /// Crop edge in pixels.
    #[arg(long, default_value_t = pffnet::data::CROP_SIZE)]
    crop: usize,
    /// Sliding-window stride in pixels.
    #[arg(long, default_value_t = pffnet::data::CROP_STRIDE)]
    stride: usize,
    /// Keep only the untransformed crop instead of all 12 variants [default: off].
    #[arg(long)]
    no_augment: bool,
}

/// Where training patches come from and how the run is configured.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Patch manifest, or a directory containing manifest.tsv [default: none; required without --synthetic].
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    data: Option<PathBuf>,
    /// Train on this many procedural hazy/clear pairs instead of --data [default: none].
    #[arg(long)]
    synthetic: Option<usize>,
    /// Edge of the procedural pairs.
    #[arg(long, default_value_t = 64, requires = "synthetic")]
    synthetic_size: usize,
    /// Starting hyperparameters: "default" (full model) or "tiny".
    #[arg(long, default_value = "default")]
    profile: String,
    /// key=value file applied over the profile; may set `profile` itself [default: none].
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value override, applied last; repeatable [default: none].
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for initialisation, shuffling and procedural data [default: the config's seed, 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Continue from a checkpoint of an earlier run, using its config [default: none].
    #[arg(long, conflicts_with_all = ["config", "overrides", "seed"])]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Residual block counts to compare.
    #[arg(long, value_delimiter = ',', default_values_t = [6, 12, 18, 24])]
    blocks: Vec<usize>,
    /// Skip-connection settings to compare: on, off or both.
    #[arg(long, default_value = "on")]
    skips: String,
}

#[derive(Debug, Args)]
pub struct DehazeArgs {
    /// Input image or directory of images.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output image, or directory when --in is a directory.
    #[arg(long)]
    out: PathBuf,
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Tile edge for memory-bounded inference [default: none, whole image].
    #[arg(long)]
    tile: Option<usize>,
    /// Overlap between tiles.
    #[arg(long, default_value_t = pffnet::inference::DEFAULT_OVERLAP, requires = "tile")]
    overlap: usize,
    /// Print the memory estimate for each image before running it [default: off].
    #[arg(long)]
    estimate: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// TSV of `restored<TAB>reference` paths, relative to the file's directory [default: none].
    #[arg(long, conflicts_with_all = ["restored", "reference"], required_unless_present = "restored")]
    pairs: Option<PathBuf>,
    /// Directory of restored images, matched by stem with --reference [default: none].
    #[arg(long, requires = "reference")]
    restored: Option<PathBuf>,
    /// Directory of reference images [default: none].
    #[arg(long, requires = "restored")]
    reference: Option<PathBuf>,
    /// Also write the per-image report as TSV here [default: none].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random seeds per operation.
    #[arg(long, default_value_t = 50)]
    seeds: usize,
    /// Random coordinates per seed in the network check.
    #[arg(long, default_value_t = 30)]
    samples: usize,
}

/// Failure of a subcommand, mapped to an exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failed(String),
}

impl From<pffnet::Error> for CliError {
    fn from(e: pffnet::Error) -> Self {
        match e {
            pffnet::Error::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Patches(a) => commands::patches(a),
        Command::Train(a) => commands::train(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Dehaze(a) => commands::dehaze(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
