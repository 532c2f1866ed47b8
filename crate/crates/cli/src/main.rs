mod commands;
mod config;
mod viz;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Deep co-attention comparator: train, evaluate and inspect pairwise
/// similarity models.
///
/// Exit codes: 0 success, 2 usage or configuration error, 3 runtime abort
/// (including a failed gradient check).
#[derive(Parser, Debug)]
#[command(name = "dcc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on synthetic identities or an image directory.
    Train(TrainArgs),
    /// Single-shot CMC / mAP evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Finite-difference gradient checks of every block.
    Gradcheck(GradcheckArgs),
    /// Draw each glimpse window of a pair comparison.
    GlimpseViz(VizArgs),
    /// Write a synthetic dataset directory.
    SynthData(SynthArgs),
}

#[derive(Args, Debug, Default)]
pub struct DataArgs {
    /// Use the procedural identity generator.
    #[arg(long)]
    pub synthetic: bool,
    /// Image directory laid out as <root>/<identity>/<camera>_<index>.png|ppm.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Synthetic identities.
    #[arg(long)]
    pub ids: Option<usize>,
    /// Synthetic views (cameras) per identity.
    #[arg(long)]
    pub views: Option<usize>,
    /// Identities held out of training and used by `eval`.
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Generator seed; defaults to the run seed.
    #[arg(long)]
    pub data_seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML config with [model], [encoder], [comparator], [glimpse],
    /// [train], [data], [eval] and [output] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Run seed; falls back to the config file, then DCC_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Episodes per epoch (sets the decay horizon).
    #[arg(long)]
    pub epoch_episodes: Option<usize>,
    /// dcc, gp or spp.
    #[arg(long)]
    pub head: Option<String>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Stop once an epoch's mean episode accuracy reaches this.
    #[arg(long)]
    pub stop_accuracy: Option<f64>,
    /// Judge --stop-accuracy on the mean of this many recent steps.
    #[arg(long)]
    pub accuracy_window: Option<u64>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Output directory for metrics.csv and checkpoints.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint; its model and optimizer settings win.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Print a progress line every this many steps.
    #[arg(long)]
    pub log_every: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Gallery resampling trials to average.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Seed for gallery sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the result as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Check only the block owning this weight (wl, wg, lstm, head, stem)
    /// or a block name.
    #[arg(long)]
    pub perturb_weight: Option<String>,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Negative control: corrupt one analytic gradient per check.
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

#[derive(Args, Debug)]
pub struct VizArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory for step_NN_{a,b}.png.
    #[arg(long)]
    pub out: PathBuf,
    /// Explicit image pair; otherwise two views of one synthetic identity.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub pair: Option<Vec<PathBuf>>,
    /// Synthetic identity to show.
    #[arg(long, default_value_t = 0)]
    pub identity: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pixel upscaling of the written overlays.
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub ids: usize,
    #[arg(long, default_value_t = 4)]
    pub views: usize,
    /// Falls back to DCC_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 56)]
    pub side: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// ppm or png.
    #[arg(long, default_value = "ppm")]
    pub format: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::GlimpseViz(a) => commands::glimpse_viz(a),
        Command::SynthData(a) => commands::synth_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
