//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::Overrides;
use crate::error::Result;
use crate::reports::BUILD_ID;

#[derive(Debug, Parser)]
#[command(name = "fusionet", version = BUILD_ID, about = "Multimodal meme classifier experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic XOR dataset (PNG images and a manifest).
    Synth(SynthArgs),
    /// Train one model and keep the best validation checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// Train every multimodal fusion kind over several seeds.
    Ablate(AblateArgs),
    /// Train on one dataset and evaluate on another.
    Crossdomain(CrossdomainArgs),
    /// Summarise finished run directories.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// The two caption trigger words, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = ["alpha".to_string(), "beta".to_string()])]
    pub triggers: Vec<String>,
}

/// Settings shared by the training commands. Flags override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    /// Flat JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// accuracy | weighted_f1
    #[arg(long)]
    pub select_metric: Option<String>,
    /// Skip padding in the LSTM and the alignment softmax.
    #[arg(long)]
    pub mask_padding: bool,
}

impl TrainFlags {
    pub fn overrides(&self, fusion: Option<String>, seed: Option<u64>) -> Overrides {
        Overrides {
            fusion,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            select_metric: self.select_metric.clone(),
            mask_padding: self.mask_padding.then_some(true),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub fusion: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Load the weights into this fusion kind instead of the stored one.
    #[arg(long)]
    pub fusion: Option<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Number of seeds; seeds run from `--seed` upwards.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct CrossdomainArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Train on both training splits.
    #[arg(long)]
    pub combined: bool,
    /// Output directory of an earlier `train` run on the target manifest.
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub fusion: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories written by the other commands.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Where to write the JSON summary.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a).map(drop),
        Command::Eval(a) => commands::eval(&a).map(drop),
        Command::Ablate(a) => commands::ablate(&a).map(drop),
        Command::Crossdomain(a) => commands::crossdomain(&a).map(drop),
        Command::Report(a) => commands::report(&a),
    }
}
