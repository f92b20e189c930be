use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use refseg::evaluation::EvalMode;
use refseg::merging::{MergeConfig, MergeStrategy, DEFAULT_NMS_IOU, DEFAULT_TOP_K};
use refseg::pipeline::WORKERS_ENV;

#[derive(Debug, Parser)]
#[command(name = "refseg", version, about = "Training-free reference-based instance segmentation")]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Memory bank operations.
    Bank {
        #[command(subcommand)]
        command: BankCommand,
    },
    /// Match, suppress and merge proposals on every target image.
    Infer(InferArgs),
    /// Score detection files against the manifest ground truth.
    Eval(EvalArgs),
    /// Run inference and evaluation once per merge strategy.
    Ablate(AblateArgs),
    /// nAP mean and spread over reference sets drawn with different seeds.
    Variance(VarianceArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Subcommand)]
pub enum BankCommand {
    /// Build a bank from the manifest references.
    Build(BankBuildArgs),
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    /// Reference images drawn per category; all references when absent.
    #[arg(long)]
    pub shots: Option<usize>,

    /// Seed for reference sampling.
    #[arg(long, default_value_t = 0, requires = "shots")]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BankSource {
    /// Prebuilt bank file; otherwise a bank is built in-run.
    #[arg(long, conflicts_with = "shots")]
    pub bank: Option<PathBuf>,

    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Duplicate handling after NMS.
    #[arg(long, value_enum, default_value_t = StrategyArg::SoftSemantic)]
    pub strategy: StrategyArg,

    #[command(flatten)]
    pub tuning: MergeTuning,
}

#[derive(Debug, Args)]
pub struct MergeTuning {
    /// IoU above which NMS suppresses a lower-ranked candidate.
    #[arg(long, default_value_t = DEFAULT_NMS_IOU)]
    pub nms_iou: f64,

    /// Detections kept per image.
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,

    /// Lower bound on the semantic weight.
    #[arg(long, default_value_t = 0.0)]
    pub weight_floor: f64,

    /// Run NMS within each category instead of across categories.
    #[arg(long)]
    pub per_class_nms: bool,
}

impl MergeTuning {
    pub fn config(&self, strategy: MergeStrategy) -> MergeConfig {
        MergeConfig {
            nms_iou: self.nms_iou,
            top_k: self.top_k,
            strategy,
            weight_floor: self.weight_floor,
            class_agnostic_nms: !self.per_class_nms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum StrategyArg {
    Hard,
    SoftPlain,
    SoftSemantic,
}

impl From<StrategyArg> for MergeStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Hard => MergeStrategy::Hard,
            StrategyArg::SoftPlain => MergeStrategy::SoftPlain,
            StrategyArg::SoftSemantic => MergeStrategy::SoftSemantic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Bbox,
    Mask,
    Semantic,
}

impl ModeArg {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeArg::Bbox => "bbox",
            ModeArg::Mask => "mask",
            ModeArg::Semantic => "semantic",
        }
    }

    pub fn coco(&self) -> Option<EvalMode> {
        match self {
            ModeArg::Bbox => Some(EvalMode::Bbox),
            ModeArg::Mask => Some(EvalMode::Mask),
            ModeArg::Semantic => None,
        }
    }
}

#[derive(Debug, Args)]
pub struct BankBuildArgs {
    #[arg(long)]
    pub manifest: PathBuf,

    /// Output `.bank` file.
    #[arg(long)]
    pub out: PathBuf,

    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub manifest: PathBuf,

    #[command(flatten)]
    pub source: BankSource,

    #[command(flatten)]
    pub merge: MergeArgs,

    /// Output directory for `detections/` and `timings.json`.
    #[arg(long)]
    pub out: PathBuf,

    /// Also write tinted PNG overlays under `overlays/`.
    #[arg(long)]
    pub overlay: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,

    /// Directory holding `<image_id>.json` detection files.
    #[arg(long)]
    pub detections: PathBuf,

    #[arg(long, value_enum, default_value_t = ModeArg::Mask)]
    pub mode: ModeArg,

    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,

    /// Detections per image considered by AP.
    #[arg(long, default_value_t = refseg::evaluation::DEFAULT_MAX_DETS)]
    pub max_dets: usize,

    /// Minimum score for a detection to enter a semantic map.
    #[arg(long, default_value_t = refseg::evaluation::DEFAULT_SEMANTIC_SCORE)]
    pub semantic_score: f64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub manifest: PathBuf,

    #[command(flatten)]
    pub source: BankSource,

    /// Strategies to compare.
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "hard,soft_plain,soft_semantic"
    )]
    pub strategy: Vec<StrategyArg>,

    #[command(flatten)]
    pub tuning: MergeTuning,

    #[arg(long, value_enum, default_value_t = ModeArg::Mask)]
    pub mode: ModeArg,

    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VarianceArgs {
    #[arg(long)]
    pub manifest: PathBuf,

    /// Reference images drawn per category in each run.
    #[arg(long)]
    pub shots: usize,

    /// One run per seed.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9")]
    pub seeds: Vec<u64>,

    #[command(flatten)]
    pub merge: MergeArgs,

    #[arg(long, value_enum, default_value_t = ModeArg::Mask)]
    pub mode: ModeArg,

    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum PresetArg {
    Noiseless,
    DuplicateHeavy,
    Noisy,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = PresetArg::DuplicateHeavy)]
    pub preset: PresetArg,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Output directory; receives `manifest.json`, `features/`, `proposals/`.
    #[arg(long)]
    pub out: PathBuf,
}
