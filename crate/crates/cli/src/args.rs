use std::path::PathBuf;

use atlas_core::render::Scale;
use atlas_core::{HeadId, Metric};
use clap::{ArgGroup, Args, ValueEnum};

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// JSON-lines manifest of utterances.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Accept tensors whose rows do not sum to one (e.g. pruned tensors).
    #[arg(long)]
    pub lax: bool,
}

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Output directory; receives metrics.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CategorizeArgs {
    /// metrics.csv written by `atlas metrics`.
    #[arg(long)]
    pub metrics: PathBuf,
    /// Output directory; receives categories.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RankCompareArgs {
    /// metrics.csv written by `atlas metrics`.
    #[arg(long)]
    pub metrics: PathBuf,
    /// First ranking: G, V, D or weight.
    #[arg(long)]
    pub a: Metric,
    /// Second ranking: G, V, D or weight.
    #[arg(long)]
    pub b: Metric,
    /// Output directory; receives rank_compare.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PrmArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Phone set file, one phone per line.
    #[arg(long)]
    pub phones: PathBuf,
    /// Head as LAYER:HEAD.
    #[arg(long)]
    pub head: HeadId,
    /// Also write prm.pgm, a diverging heatmap of the map.
    #[arg(long)]
    pub pgm: bool,
    /// Output directory; receives prm.csv and concentration.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ConcentrationArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Phone set file, one phone per line.
    #[arg(long)]
    pub phones: PathBuf,
    /// Output directory; receives concentration.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["attn", "features"])))]
pub struct SegmentArgs {
    /// ATNS attention file; rows of --head are the features.
    #[arg(long, requires = "head")]
    pub attn: Option<PathBuf>,
    /// Version-2 ATNS feature file (e.g. MFCCs).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Head as LAYER:HEAD.
    #[arg(long)]
    pub head: Option<HeadId>,
    /// Half-width of the checkerboard kernel, in frames.
    #[arg(long)]
    pub kernel_width: usize,
    /// Minimum novelty of an accepted peak.
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: f64,
    /// Boundaries closer than this many frames are suppressed.
    #[arg(long, default_value_t = 1)]
    pub min_gap: usize,
    /// Duration of one attention frame in milliseconds.
    #[arg(long)]
    pub frame_shift_ms: f64,
    /// Hit tolerance for evaluation, in milliseconds.
    #[arg(long, default_value_t = 20.0)]
    pub tolerance_ms: f64,
    /// Reference alignment TSV; enables eval.json.
    #[arg(long, requires = "phones")]
    pub gold: Option<PathBuf>,
    /// Phone set used to read --gold.
    #[arg(long)]
    pub phones: Option<PathBuf>,
    /// Output directory; receives boundaries.tsv and novelty.tsv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Phone set used to read the alignments.
    #[arg(long)]
    pub phones: PathBuf,
    /// Head as LAYER:HEAD.
    #[arg(long)]
    pub head: HeadId,
    /// JSON grid: {"kernel_widths": [..], "thresholds": [..], "min_gaps": [..]}.
    #[arg(long)]
    pub grid: PathBuf,
    /// Duration of one attention frame in milliseconds.
    #[arg(long)]
    pub frame_shift_ms: f64,
    /// Hit tolerance for evaluation, in milliseconds.
    #[arg(long, default_value_t = 20.0)]
    pub tolerance_ms: f64,
    /// Output directory; receives tuned.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Emit {
    /// Only the mask JSON files.
    Masks,
    /// Masks plus one pruned corpus per step.
    Tensors,
}

#[derive(Debug, Clone, Args)]
pub struct PruneHeadsArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Ranking that decides the pruning order: G, V, D or weight.
    #[arg(long)]
    pub metric: Metric,
    /// Heads added to the mask per step.
    #[arg(long)]
    pub step: usize,
    /// Number of cumulative steps.
    #[arg(long)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = Emit::Masks)]
    pub emit: Emit,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PruneSpanArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Keep only entries with |q - k| <= r.
    #[arg(long)]
    pub r: usize,
    /// Rescale rows that lost mass so they sum to one again.
    #[arg(long)]
    pub renormalize: bool,
    /// Output directory; receives the pruned corpus and its manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Linear,
    Log,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Linear => Scale::Linear,
            ScaleArg::Log => Scale::Log,
        }
    }
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["attn", "features"])))]
pub struct RenderArgs {
    /// ATNS attention file.
    #[arg(long, requires = "head")]
    pub attn: Option<PathBuf>,
    /// Version-2 ATNS feature file; renders its similarity matrix.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Head as LAYER:HEAD.
    #[arg(long)]
    pub head: Option<HeadId>,
    /// Render the cosine similarity of the head's rows instead of the map.
    #[arg(long)]
    pub similarity: bool,
    #[arg(long, value_enum, default_value_t = ScaleArg::Linear)]
    pub scale: ScaleArg,
    /// Cap on the value mapped to white.
    #[arg(long, allow_negative_numbers = true)]
    pub clamp: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// JSON synthesis spec (sequence length, layers, head recipes, seed).
    #[arg(long)]
    pub spec: PathBuf,
    /// Number of utterances to generate.
    #[arg(long, default_value_t = 1)]
    pub utterances: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("input").required(true).multiple(true).args(["files", "manifest"])))]
pub struct ValidateArgs {
    /// ATNS files (attention or feature).
    pub files: Vec<PathBuf>,
    /// Also load and check every manifest entry.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Phone set; makes --manifest check the alignments too.
    #[arg(long, requires = "manifest")]
    pub phones: Option<PathBuf>,
    /// Skip the row-sum check.
    #[arg(long)]
    pub lax: bool,
}
