use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mist_core::evaluation::FarSubset;
use mist_core::sampling::SamplingMode;

#[derive(Debug, Parser)]
#[command(name = "mist", version, about = "Two-stage self-training for weakly supervised video anomaly detection")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with planted anomalies.
    Synth(SynthArgs),
    /// Stage I: train the clip-score generator on pre-extracted features.
    TrainGen(TrainGenArgs),
    /// Turn generator scores into pseudo labels for abnormal training videos.
    Pseudo(PseudoArgs),
    /// Stage II: fine-tune the attention encoder on raw clips.
    Finetune(FinetuneArgs),
    /// Score videos with a generator or encoder checkpoint.
    Score(ScoreArgs),
    /// Compute frame AUC, false-alarm rate and score gap.
    Eval(EvalArgs),
    /// Render per-video score curves with ground-truth spans shaded.
    Plot(PlotArgs),
    /// Run both stages, scoring, evaluation and plotting.
    Pipeline(PipelineArgs),
}

/// Hyperparameter sources, lowest precedence first: defaults, `--config`,
/// `--set`, then `--seed` (or `MIST_SEED`) for the seed.
#[derive(Debug, Clone, Args, Default)]
pub struct ConfigArgs {
    /// JSON file of hyperparameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one hyperparameter, e.g. `--set ft_epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, env = "MIST_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplingArg {
    SparseContinuous,
    Uniform,
}

impl From<SamplingArg> for SamplingMode {
    fn from(s: SamplingArg) -> Self {
        match s {
            SamplingArg::SparseContinuous => SamplingMode::SparseContinuous,
            SamplingArg::Uniform => SamplingMode::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for mist_core::dataio::Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => mist_core::dataio::Split::Train,
            SplitArg::Test => mist_core::dataio::Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FarSubsetArg {
    All,
    Normal,
    Abnormal,
}

impl From<FarSubsetArg> for FarSubset {
    fn from(s: FarSubsetArg) -> Self {
        match s {
            FarSubsetArg::All => FarSubset::All,
            FarSubsetArg::Normal => FarSubset::Normal,
            FarSubsetArg::Abnormal => FarSubset::Abnormal,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "MIST_SEED", default_value_t = 0)]
    pub seed: u64,
    /// JSON file with dataset shape; flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub num_normal: Option<usize>,
    #[arg(long)]
    pub num_abnormal: Option<usize>,
    #[arg(long)]
    pub test_normal: Option<usize>,
    #[arg(long)]
    pub test_abnormal: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub anomaly_shift: Option<f64>,
    #[arg(long)]
    pub anomaly_min_len: Option<usize>,
    /// Skip writing raw clips (features only).
    #[arg(long)]
    pub no_pixels: bool,
}

#[derive(Debug, Args)]
pub struct TrainGenArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_enum, default_value = "sparse-continuous")]
    pub sampling: SamplingArg,
    /// Checkpoint path; a `.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Write per-iteration losses as JSON.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PseudoArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub generator: PathBuf,
    /// Without `--config`, hyperparameters come from the generator checkpoint.
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory of pseudo-label files.
    #[arg(long)]
    pub labels: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub disable_sga: bool,
    #[arg(long)]
    pub disable_hg: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, conflicts_with = "generator", required_unless_present = "generator")]
    pub encoder: Option<PathBuf>,
    #[arg(long)]
    pub generator: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Also export encoder attention maps to this directory.
    #[arg(long, requires = "encoder")]
    pub attention: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    /// Defaults to `gt.json` next to the manifest.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Defaults to `far_threshold` from the configuration.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum, default_value = "all")]
    pub far_subset: FarSubsetArg,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Videos to plot; all videos of the split when omitted.
    #[arg(long = "video")]
    pub videos: Vec<String>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_enum, default_value = "sparse-continuous")]
    pub sampling: SamplingArg,
    #[arg(long)]
    pub disable_sga: bool,
    #[arg(long)]
    pub disable_hg: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_plots: bool,
}
