//! In-memory and on-disk representation of attention tensors, alignments,
//! phone sets and corpus manifests.
//!
//! Alignments are expected at the attention frame rate; nothing here
//! resamples.

mod alignment;
mod atns;
mod manifest;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array4, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use alignment::{read_alignment, write_alignment, AlignmentTrack, PhoneSet};
pub use atns::{
    read_attention, read_features, write_attention, write_attention_lax, write_features,
    ATNS_MAGIC, ATNS_VERSION_ATTENTION, ATNS_VERSION_FEATURES,
};
pub use manifest::{Corpus, CorpusManifest, ManifestEntry, Utterance};

/// Tolerance on `|sum(row) - 1|` in strict validation.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Strict mode requires every row to be a distribution; lax mode only
/// requires finite, non-negative weights (pruned tensors).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValidationMode {
    #[default]
    Strict,
    Lax,
}

/// Address of one attention head, both indices 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub const fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }

    /// Row-major position among `num_heads` heads per layer.
    pub fn flat_index(&self, num_heads: usize) -> usize {
        self.layer * num_heads + self.head
    }

    pub fn from_flat_index(index: usize, num_heads: usize) -> Self {
        Self::new(index / num_heads, index % num_heads)
    }

    pub fn check_bounds(&self, num_layers: usize, num_heads: usize) -> Result<()> {
        if self.layer >= num_layers || self.head >= num_heads {
            return Err(Error::Index(format!(
                "head {self} out of bounds for {num_layers} layers x {num_heads} heads"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.layer, self.head)
    }
}

impl FromStr for HeadId {
    type Err = Error;

    /// Parses `"layer:head"`.
    fn from_str(s: &str) -> Result<Self> {
        let (l, h) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("expected LAYER:HEAD, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad head id {s:?}: {e}")))
        };
        Ok(Self::new(parse(l)?, parse(h)?))
    }
}

/// Every head of an `num_layers x num_heads` model in (layer, head) order.
pub fn all_heads(num_layers: usize, num_heads: usize) -> impl Iterator<Item = HeadId> {
    (0..num_layers).flat_map(move |l| (0..num_heads).map(move |h| HeadId::new(l, h)))
}

/// Attention weights of one utterance, indexed `[layer][head][q][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    utterance_id: String,
    weights: Array4<f32>,
}

impl AttentionTensor {
    /// Builds a tensor and validates it in the given mode.
    pub fn new(
        utterance_id: impl Into<String>,
        weights: Array4<f32>,
        mode: ValidationMode,
    ) -> Result<Self> {
        let tensor = Self::new_unchecked(utterance_id, weights)?;
        tensor.validate(mode)?;
        Ok(tensor)
    }

    /// Builds a tensor checking only the shape (non-empty, square maps).
    pub fn new_unchecked(utterance_id: impl Into<String>, weights: Array4<f32>) -> Result<Self> {
        let (l, h, q, k) = weights.dim();
        if l == 0 || h == 0 || q == 0 {
            return Err(Error::domain(format!(
                "tensor dimensions must be positive, got {l}x{h}x{q}x{k}"
            )));
        }
        if q != k {
            return Err(Error::domain(format!("attention maps must be square, got {q}x{k}")));
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            weights,
        })
    }

    pub fn from_vec(
        utterance_id: impl Into<String>,
        num_layers: usize,
        num_heads: usize,
        seq_len: usize,
        data: Vec<f32>,
        mode: ValidationMode,
    ) -> Result<Self> {
        let weights = Array4::from_shape_vec((num_layers, num_heads, seq_len, seq_len), data)
            .map_err(|e| Error::domain(format!("bad tensor shape: {e}")))?;
        Self::new(utterance_id, weights, mode)
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn num_layers(&self) -> usize {
        self.weights.dim().0
    }

    pub fn num_heads(&self) -> usize {
        self.weights.dim().1
    }

    pub fn seq_len(&self) -> usize {
        self.weights.dim().2
    }

    pub fn weights(&self) -> &Array4<f32> {
        &self.weights
    }

    pub fn into_weights(self) -> Array4<f32> {
        self.weights
    }

    pub fn heads(&self) -> impl Iterator<Item = HeadId> {
        all_heads(self.num_layers(), self.num_heads())
    }

    pub fn check_head(&self, head: HeadId) -> Result<()> {
        head.check_bounds(self.num_layers(), self.num_heads())
    }

    /// The `T x T` map of one head. Panics if `head` is out of bounds; use
    /// [`AttentionTensor::head_map`] for a checked lookup.
    pub fn map(&self, head: HeadId) -> ArrayView2<'_, f32> {
        self.weights
            .index_axis(ndarray::Axis(0), head.layer)
            .index_axis_move(ndarray::Axis(0), head.head)
    }

    pub fn head_map(&self, head: HeadId) -> Result<ArrayView2<'_, f32>> {
        self.check_head(head)?;
        Ok(self.map(head))
    }

    pub(crate) fn map_mut(&mut self, head: HeadId) -> ArrayViewMut2<'_, f32> {
        self.weights
            .index_axis_mut(ndarray::Axis(0), head.layer)
            .index_axis_move(ndarray::Axis(0), head.head)
    }

    /// Checks the weight invariants, reporting the first offending
    /// (layer, head, query) in row-major order.
    pub fn validate(&self, mode: ValidationMode) -> Result<()> {
        for head in self.heads() {
            for (q, row) in self.map(head).outer_iter().enumerate() {
                let mut sum = 0.0f64;
                for (k, &w) in row.iter().enumerate() {
                    if !w.is_finite() {
                        return Err(violation(head, q, format!("non-finite weight at key {k}")));
                    }
                    if w < 0.0 {
                        return Err(violation(head, q, format!("negative weight {w} at key {k}")));
                    }
                    sum += f64::from(w);
                }
                if mode == ValidationMode::Strict && (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(violation(head, q, format!("row sums to {sum}, expected 1")));
                }
            }
        }
        Ok(())
    }
}

fn violation(head: HeadId, query: usize, message: String) -> Error {
    Error::Validation {
        layer: head.layer,
        head: head.head,
        query,
        message,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn head_id_parse_and_display() {
        let h: HeadId = "3:11".parse().unwrap();
        assert_eq!(h, HeadId::new(3, 11));
        assert_eq!(h.to_string(), "3:11");
        assert!("3-11".parse::<HeadId>().is_err());
        assert!("a:1".parse::<HeadId>().is_err());
    }

    #[test]
    fn head_ordering_is_layer_major() {
        let heads: Vec<_> = all_heads(2, 3).collect();
        assert_eq!(heads.len(), 6);
        assert!(heads.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(HeadId::from_flat_index(4, 3), HeadId::new(1, 1));
        assert_eq!(HeadId::new(1, 1).flat_index(3), 4);
    }

    #[test]
    fn strict_rejects_bad_rows_and_lax_accepts_zero_rows() {
        let mut w = Array4::<f32>::from_elem((1, 2, 2, 2), 0.5);
        w[[0, 1, 1, 0]] = 0.0;
        w[[0, 1, 1, 1]] = 0.0;
        let err = AttentionTensor::new("u", w.clone(), ValidationMode::Strict).unwrap_err();
        match err {
            Error::Validation {
                layer, head, query, ..
            } => assert_eq!((layer, head, query), (0, 1, 1)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(AttentionTensor::new("u", w, ValidationMode::Lax).is_ok());
    }

    #[test]
    fn negative_and_nan_rejected_in_both_modes() {
        for bad in [-0.1f32, f32::NAN, f32::INFINITY] {
            let mut w = Array4::<f32>::from_elem((1, 1, 2, 2), 0.5);
            w[[0, 0, 0, 1]] = bad;
            assert!(AttentionTensor::new("u", w.clone(), ValidationMode::Lax).is_err());
            assert!(AttentionTensor::new("u", w, ValidationMode::Strict).is_err());
        }
    }

    #[test]
    fn non_square_or_empty_rejected() {
        let w = Array4::<f32>::zeros((1, 1, 2, 3));
        assert!(AttentionTensor::new_unchecked("u", w).is_err());
        let w = Array4::<f32>::zeros((0, 1, 2, 2));
        assert!(AttentionTensor::new_unchecked("u", w).is_err());
    }

    #[test]
    fn head_map_checks_bounds() {
        let w = Array4::<f32>::from_elem((1, 1, 2, 2), 0.5);
        let t = AttentionTensor::new("u", w, ValidationMode::Strict).unwrap();
        assert!(t.head_map(HeadId::new(0, 0)).is_ok());
        assert!(matches!(t.head_map(HeadId::new(0, 1)), Err(Error::Index(_))));
    }
}
