//! The `atlas` command-line tool.
//!
//! Every subcommand reads its inputs, writes results as files under `--out`
//! and reports progress on stderr. Exit codes: 0 success, 1 domain or I/O
//! failure, 2 usage error.

use std::ffi::OsString;
use std::fmt;
use std::num::NonZeroUsize;

use clap::{Parser, Subcommand};

mod analysis;
mod args;
mod corpus_ops;
mod output;
mod segment;

pub use args::*;

#[derive(Debug, Parser)]
#[command(name = "atlas", version, about = "Attention head analysis for speech transformers")]
pub struct Cli {
    /// Worker threads for per-utterance work (default: all cores).
    #[arg(long, global = true, env = "ATLAS_PARALLELISM")]
    pub parallelism: Option<NonZeroUsize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every head (G, V, D, max weight), rank and categorize.
    Metrics(MetricsArgs),
    /// Categorize heads from a metrics CSV.
    Categorize(CategorizeArgs),
    /// Segment one utterance from an attention head or a feature file.
    Segment(SegmentArgs),
    /// Grid-search segmentation parameters on an aligned corpus.
    Tune(TuneArgs),
    /// Phoneme relation map and concentration for one head.
    Prm(PrmArgs),
    /// Extreme concentration of every head, next to its verticality.
    Concentration(ConcentrationArgs),
    /// Cumulative head pruning in metric rank order.
    PruneHeads(PruneHeadsArgs),
    /// Zero attention farther than r frames from the diagonal.
    PruneSpan(PruneSpanArgs),
    /// Render an attention map or similarity matrix as a PGM image.
    Render(RenderArgs),
    /// Generate a synthetic corpus with known head categories.
    Synth(SynthArgs),
    /// Compare two metric rankings head by head.
    RankCompare(RankCompareArgs),
    /// Check ATNS files (and optionally a whole manifest).
    Validate(ValidateArgs),
}

/// A problem with how the tool was invoked rather than with the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub(crate) fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.parallelism {
        builder = builder.num_threads(n.get());
    }
    let pool = builder.build()?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Metrics(a) => analysis::metrics(&a),
        Command::Categorize(a) => analysis::categorize(&a),
        Command::RankCompare(a) => analysis::rank_compare(&a),
        Command::Prm(a) => analysis::prm(&a),
        Command::Concentration(a) => analysis::concentration(&a),
        Command::Segment(a) => segment::segment(&a),
        Command::Tune(a) => segment::tune(&a),
        Command::PruneHeads(a) => corpus_ops::prune_heads(&a),
        Command::PruneSpan(a) => corpus_ops::prune_span(&a),
        Command::Render(a) => corpus_ops::render(&a),
        Command::Synth(a) => corpus_ops::synth(&a),
        Command::Validate(a) => corpus_ops::validate(&a),
    }
}
