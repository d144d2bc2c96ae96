//! Analysis toolkit for multi-head self-attention in self-supervised speech
//! transformers.
//!
//! The crate works on per-utterance attention tensors (`[layer][head][q][k]`)
//! and provides:
//!
//! - [`tensorio`]: the ATNS container, alignments, phone sets and manifests;
//! - [`synthgen`]: synthetic heads with known categories and boundaries;
//! - [`metrics`]: globalness / verticality / diagonality / max-weight scores,
//!   rankings and categorization;
//! - [`segmentation`]: phoneme-boundary detection from attention rows and its
//!   evaluation (precision, recall, R-value);
//! - [`prm`]: phoneme relation maps and per-phone concentration;
//! - [`pruning`]: head and span pruning plus cumulative pruning schedules;
//! - [`render`]: grayscale PGM rendering of maps.
//!
//! Attention rows are assumed to be post-softmax distributions. Strict
//! validation enforces this; pruned tensors are checked in lax mode.

pub mod error;
pub mod metrics;
pub mod prm;
pub mod pruning;
pub mod render;
pub mod segmentation;
pub mod synthgen;
pub mod tensorio;

pub use error::{Error, Result};
pub use metrics::{Category, HeadMetrics, Metric, RankColumn, RankTable};
pub use prm::{Concentration, PhonemeRelationMap, RelationPrior};
pub use pruning::{PruneMask, PruneSchedule, SpanLimit};
pub use segmentation::{BoundarySet, FeatureSequence, SegEvalResult, SegParams, SimilarityMatrix};
pub use synthgen::{HeadRecipe, SynthSpec};
pub use tensorio::{
    AlignmentTrack, AttentionTensor, Corpus, CorpusManifest, HeadId, PhoneSet, Utterance,
    ValidationMode,
};
