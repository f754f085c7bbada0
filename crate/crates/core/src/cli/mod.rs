//! Command-line front end: corpus generation, training, inference,
//! evaluation and the synthetic experiments.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::run;
pub use config::RunConfig;
pub use manifest::Manifest;

use crate::evalsynth::NerveKind;

#[derive(Debug, Parser)]
#[command(name = "pointrefine", version, about = "Point-cloud refinement of volumetric segmentations")]
pub struct Cli {
    /// TOML file with [train], [inference], [synth], [corpus] and
    /// [experiment] tables; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads. Results do not depend on this value.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic phantom, or a randomized corpus with --corpus.
    Synth(SynthArgs),
    /// Train a network on a corpus directory.
    Train(TrainArgs),
    /// Refine one probability volume with a trained checkpoint.
    Infer(InferArgs),
    /// Score a binary segmentation against a ground truth.
    Eval(EvalArgs),
    /// Run one of the synthetic sensitivity experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Straight,
    Branching,
}

impl From<KindArg> for NerveKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Straight => NerveKind::Straight,
            KindArg::Branching => NerveKind::Branching,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Nerve probability level.
    #[arg(long)]
    pub q: Option<f64>,
    /// Tube diameter in voxels.
    #[arg(long)]
    pub diameter: Option<f64>,
    /// Slices covered by a false-positive tube.
    #[arg(long)]
    pub fp_span: Option<usize>,
    /// Probability level of the false positive (default 0.5).
    #[arg(long, requires = "fp_span")]
    pub fp_q: Option<f64>,
    /// Generate this many randomized cases instead of one phantom.
    #[arg(long)]
    pub corpus: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of `case_*` subdirectories written by `synth --corpus`.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the 512-point, two-stage architecture.
    #[arg(long)]
    pub reduced_spec: bool,
}

#[derive(Debug, Args)]
pub struct InferenceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// Probability volume (`.raw` with `.meta` sidecar).
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub segmentation: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCommand {
    /// Clean straight and branching nerves at every probability level.
    ProbSweep(ExperimentArgs),
    /// False-positive span by probability grid around a fixed nerve.
    FalsePositive(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write every refined volume under `out/volumes`.
    #[arg(long)]
    pub save_volumes: bool,
}
