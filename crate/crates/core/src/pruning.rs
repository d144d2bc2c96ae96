//! Head ablation and attention-span masking, plus cumulative pruning
//! schedules driven by a metric ranking.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::RankColumn;
use crate::tensorio::{AttentionTensor, Corpus, HeadId};

/// Set of heads to ablate. Serializes as a JSON list of `{layer, head}`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PruneMask(BTreeSet<HeadId>);

impl PruneMask {
    pub fn new(heads: impl IntoIterator<Item = HeadId>) -> Self {
        Self(heads.into_iter().collect())
    }

    pub fn heads(&self) -> impl Iterator<Item = HeadId> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, head: HeadId) -> bool {
        self.0.contains(&head)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_subset(&self, other: &PruneMask) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn check_bounds(&self, num_layers: usize, num_heads: usize) -> Result<()> {
        self.0.iter().try_for_each(|h| h.check_bounds(num_layers, num_heads))
    }
}

/// Zeroes every row of the masked heads; all other weights are copied as is.
pub fn head_prune(tensor: &AttentionTensor, mask: &PruneMask) -> Result<AttentionTensor> {
    mask.check_bounds(tensor.num_layers(), tensor.num_heads())?;
    let mut out = tensor.clone();
    for head in mask.heads() {
        out.map_mut(head).fill(0.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanLimit {
    pub r: usize,
    pub renormalize: bool,
}

/// Zeroes `A[q, k]` wherever `|q - k| > r`, in every head.
///
/// With `renormalize`, a row that lost mass and still has a positive sum is
/// rescaled to sum to 1. Rows that lost nothing are left untouched, which
/// keeps the operation idempotent.
pub fn span_prune(tensor: &AttentionTensor, limit: SpanLimit) -> AttentionTensor {
    let mut out = tensor.clone();
    for head in tensor.heads() {
        let mut map = out.map_mut(head);
        for (q, mut row) in map.outer_iter_mut().enumerate() {
            let mut masked_any = false;
            for (k, w) in row.iter_mut().enumerate() {
                if q.abs_diff(k) > limit.r && *w != 0.0 {
                    *w = 0.0;
                    masked_any = true;
                }
            }
            if limit.renormalize && masked_any {
                let sum: f64 = row.iter().map(|&w| f64::from(w)).sum();
                if sum > 0.0 {
                    row.mapv_inplace(|w| (f64::from(w) / sum) as f32);
                }
            }
        }
    }
    out
}

/// Heads in pruning order (rank 1 first), consumed `step` at a time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub order: Vec<HeadId>,
    pub step: usize,
}

impl PruneSchedule {
    pub fn chunks(&self) -> impl Iterator<Item = &[HeadId]> {
        self.order.chunks(self.step)
    }

    pub fn total_heads(&self) -> usize {
        self.order.len()
    }
}

/// Highest metric value is pruned first.
pub fn make_schedule(ranks: &RankColumn, step: usize) -> Result<PruneSchedule> {
    if step == 0 {
        return Err(Error::domain("pruning step must be >= 1"));
    }
    Ok(PruneSchedule {
        order: ranks.order().to_vec(),
        step,
    })
}

/// Cumulative masks for the first `steps` increments: mask `i` holds the
/// first `(i + 1) * step` heads of the schedule.
pub fn apply_schedule(schedule: &PruneSchedule, steps: usize) -> Result<Vec<PruneMask>> {
    let needed = steps
        .checked_mul(schedule.step)
        .filter(|&n| n <= schedule.total_heads())
        .ok_or_else(|| {
            Error::domain(format!(
                "{steps} steps of {} heads exceed the {} available heads",
                schedule.step,
                schedule.total_heads()
            ))
        })?;
    debug_assert!(needed <= schedule.order.len());
    Ok((1..=steps)
        .map(|i| PruneMask::new(schedule.order[..i * schedule.step].iter().copied()))
        .collect())
}

/// Applies one mask to every utterance of a corpus.
pub fn prune_corpus(corpus: &Corpus, mask: &PruneMask) -> Result<Vec<AttentionTensor>> {
    corpus.tensors().map(|t| head_prune(t, mask)).collect()
}
