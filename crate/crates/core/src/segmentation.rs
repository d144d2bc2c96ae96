//! Phoneme-boundary detection from a feature sequence (attention rows or
//! external features) and tolerance-window evaluation.
//!
//! Pipeline: cosine self-similarity -> checkerboard novelty along the main
//! diagonal -> greedy peak picking. Evaluation matches predicted and gold
//! boundaries one-to-one and reports precision, recall, F1,
//! over-segmentation and R-value.

use std::collections::BTreeSet;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::{AttentionTensor, Corpus, HeadId};

/// `T` feature vectors of a common dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    len: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureSequence {
    pub fn from_flat(len: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("feature dimension must be >= 1"));
        }
        if len < 2 {
            return Err(Error::domain(format!("feature sequence needs at least 2 frames, got {len}")));
        }
        if data.len() != len * dim {
            return Err(Error::domain(format!(
                "expected {} values for {len}x{dim} features, got {}",
                len * dim,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite feature at frame {}", i / dim)));
        }
        Ok(Self { len, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::domain("feature rows have different dimensions"));
        }
        Self::from_flat(rows.len(), dim, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Row `q` of the head's map becomes feature `q`.
pub fn attention_rows_as_features(tensor: &AttentionTensor, head: HeadId) -> Result<FeatureSequence> {
    let map = tensor.head_map(head)?;
    let t = tensor.seq_len();
    FeatureSequence::from_flat(t, t, map.iter().map(|&w| f64::from(w)).collect())
}

/// Symmetric `T x T` similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(pub Array2<f64>);

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }
}

/// Pairwise cosine similarity; the diagonal is exactly 1.
pub fn similarity_matrix(features: &FeatureSequence) -> Result<SimilarityMatrix> {
    let n = features.len();
    let norms: Vec<f64> = features
        .rows()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if let Some(frame) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::domain(format!("zero feature vector at frame {frame}")));
    }
    let mut sim = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        sim[[i, i]] = 1.0;
        let ri = features.row(i);
        for j in i + 1..n {
            let dot: f64 = ri.iter().zip(features.row(j)).map(|(a, b)| a * b).sum();
            let c = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            sim[[i, j]] = c;
            sim[[j, i]] = c;
        }
    }
    Ok(SimilarityMatrix(sim))
}

/// Checkerboard novelty along the main diagonal.
///
/// For frame `t` the kernel covers rows and columns `[t - v, t + v)` with
/// `v = min(w, t, T - t)`, so it is truncated symmetrically at the sequence
/// edges. Same-side quadrants count +1, cross quadrants -1, and the sum is
/// divided by the `4 v^2` in-bounds cells. Frame 0 (v = 0) scores 0. A
/// constant matrix therefore scores 0 everywhere.
pub fn novelty_curve(sim: &SimilarityMatrix, kernel_width: usize) -> Result<Vec<f64>> {
    let t_len = sim.len();
    if kernel_width == 0 || kernel_width > t_len / 2 {
        return Err(Error::domain(format!(
            "kernel width {kernel_width} must be in [1, {}] for T = {t_len}",
            t_len / 2
        )));
    }
    // integral image: p[i][j] = sum of sim[..i, ..j]
    let stride = t_len + 1;
    let mut p = vec![0.0f64; stride * stride];
    for i in 0..t_len {
        let mut row_acc = 0.0;
        for j in 0..t_len {
            row_acc += sim.0[[i, j]];
            p[(i + 1) * stride + j + 1] = p[i * stride + j + 1] + row_acc;
        }
    }
    let rect = |r0: usize, r1: usize, c0: usize, c1: usize| {
        p[r1 * stride + c1] - p[r0 * stride + c1] - p[r1 * stride + c0] + p[r0 * stride + c0]
    };
    Ok((0..t_len)
        .map(|t| {
            let v = kernel_width.min(t).min(t_len - t);
            if v == 0 {
                return 0.0;
            }
            let same = rect(t - v, t, t - v, t) + rect(t, t + v, t, t + v);
            let cross = rect(t - v, t, t, t + v) + rect(t, t + v, t - v, t);
            (same - cross) / (4 * v * v) as f64
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegParams {
    pub kernel_width: usize,
    pub peak_threshold: f64,
    pub min_gap: usize,
}

impl SegParams {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_width == 0 {
            return Err(Error::domain("kernel_width must be >= 1"));
        }
        if self.min_gap == 0 {
            return Err(Error::domain("min_gap must be >= 1"));
        }
        if self.peak_threshold.is_nan() {
            return Err(Error::domain("peak_threshold is NaN"));
        }
        Ok(())
    }
}

/// Strictly increasing boundary frames in `(0, T)`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BoundarySet(Vec<usize>);

impl BoundarySet {
    pub fn new(frames: Vec<usize>, seq_len: usize) -> Result<Self> {
        let mut prev = 0;
        for &f in &frames {
            if f <= prev || f >= seq_len {
                return Err(Error::domain(format!(
                    "boundaries must be strictly increasing within (0, {seq_len}), got {frames:?}"
                )));
            }
            prev = f;
        }
        Ok(Self(frames))
    }

    pub fn frames(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Local maxima (`>=` both neighbours) at frames `1..T` with value at least
/// `peak_threshold`, accepted greedily from the highest value down (ties:
/// earlier frame first) unless closer than `min_gap` frames to an accepted
/// boundary.
pub fn pick_boundaries(novelty: &[f64], params: &SegParams) -> Result<BoundarySet> {
    params.validate()?;
    let n = novelty.len();
    let mut candidates: Vec<usize> = (1..n)
        .filter(|&t| {
            let v = novelty[t];
            v >= params.peak_threshold && v >= novelty[t - 1] && (t + 1 == n || v >= novelty[t + 1])
        })
        .collect();
    candidates.sort_by(|&a, &b| novelty[b].total_cmp(&novelty[a]).then(a.cmp(&b)));
    let mut accepted = BTreeSet::new();
    for t in candidates {
        let lo = t.saturating_sub(params.min_gap - 1);
        if accepted.range(lo..t + params.min_gap).next().is_none() {
            accepted.insert(t);
        }
    }
    Ok(BoundarySet(accepted.into_iter().collect()))
}

/// Full pipeline on one feature sequence.
pub fn segment_features(features: &FeatureSequence, params: &SegParams) -> Result<(BoundarySet, Vec<f64>)> {
    let sim = similarity_matrix(features)?;
    let novelty = novelty_curve(&sim, params.kernel_width)?;
    Ok((pick_boundaries(&novelty, params)?, novelty))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegEvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub r_value: f64,
    pub hit_count: usize,
    pub pred_count: usize,
    pub gold_count: usize,
    pub over_segmentation: f64,
}

impl SegEvalResult {
    /// Builds the scores from counts. Conventions: precision is 1 with no
    /// predictions, recall is 1 with no gold boundaries, and with no gold
    /// boundaries the over-segmentation is the raw prediction count.
    pub fn from_counts(hit_count: usize, pred_count: usize, gold_count: usize) -> Self {
        let precision = if pred_count == 0 {
            1.0
        } else {
            hit_count as f64 / pred_count as f64
        };
        let recall = if gold_count == 0 {
            1.0
        } else {
            hit_count as f64 / gold_count as f64
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let over_segmentation = if gold_count == 0 {
            pred_count as f64
        } else {
            pred_count as f64 / gold_count as f64 - 1.0
        };
        Self {
            precision,
            recall,
            f1,
            r_value: r_value(recall, over_segmentation),
            hit_count,
            pred_count,
            gold_count,
            over_segmentation,
        }
    }

    /// R-value on the 0-100 scale used in reports.
    pub fn r_value_percent(&self) -> f64 {
        self.r_value * 100.0
    }
}

/// R-value from hit rate and over-segmentation (both fractional).
pub fn r_value(hit_rate: f64, over_segmentation: f64) -> f64 {
    let r1 = ((1.0 - hit_rate).powi(2) + over_segmentation.powi(2)).sqrt();
    let r2 = (-over_segmentation + hit_rate - 1.0) / std::f64::consts::SQRT_2;
    1.0 - (r1.abs() + r2.abs()) / 2.0
}

/// One-to-one matching: pairs within `tolerance` frames are taken in order
/// of increasing distance (ties: smaller gold index, then smaller predicted
/// index), each boundary used at most once.
pub fn evaluate_boundaries(pred: &BoundarySet, gold: &BoundarySet, tolerance: usize) -> SegEvalResult {
    let p = pred.frames();
    let mut pairs = Vec::new();
    for (gi, &g) in gold.frames().iter().enumerate() {
        let start = p.partition_point(|&x| x + tolerance < g);
        for (pi, &x) in p.iter().enumerate().skip(start) {
            if x > g + tolerance {
                break;
            }
            pairs.push((x.abs_diff(g), gi, pi));
        }
    }
    pairs.sort_unstable();
    let mut gold_used = vec![false; gold.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut hits = 0;
    for (_, gi, pi) in pairs {
        if !gold_used[gi] && !pred_used[pi] {
            gold_used[gi] = true;
            pred_used[pi] = true;
            hits += 1;
        }
    }
    SegEvalResult::from_counts(hits, pred.len(), gold.len())
}

/// Tolerance window in whole frames: `floor(tolerance_ms / frame_shift_ms)`.
pub fn ms_to_frames(tolerance_ms: f64, frame_shift_ms: f64) -> Result<usize> {
    if !(frame_shift_ms.is_finite() && frame_shift_ms > 0.0) {
        return Err(Error::domain(format!("frame shift must be positive, got {frame_shift_ms}")));
    }
    if !(tolerance_ms.is_finite() && tolerance_ms >= 0.0) {
        return Err(Error::domain(format!("tolerance must be >= 0, got {tolerance_ms}")));
    }
    // the epsilon keeps exact multiples such as 20 / 10 from rounding down
    Ok((tolerance_ms / frame_shift_ms + 1e-9).floor() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    pub kernel_widths: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub min_gaps: Vec<usize>,
}

impl TuneGrid {
    pub fn points(&self) -> Vec<SegParams> {
        let mut out = Vec::new();
        for &kernel_width in &self.kernel_widths {
            for &min_gap in &self.min_gaps {
                for &peak_threshold in &self.thresholds {
                    out.push(SegParams {
                        kernel_width,
                        peak_threshold,
                        min_gap,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub params: SegParams,
    pub mean_r_value: f64,
    /// Mean R-value of every grid point, in grid order.
    pub scores: Vec<(SegParams, f64)>,
}

/// Picks the grid point with the highest mean R-value over the corpus.
/// Gold boundaries come from each utterance's alignment. Ties go to the
/// smaller kernel width, then smaller min gap, then smaller threshold.
pub fn tune_segmentation_params(
    corpus: &Corpus,
    head: HeadId,
    grid: &TuneGrid,
    tolerance: usize,
) -> Result<TuneResult> {
    corpus.check_head(head)?;
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::domain("tuning grid is empty"));
    }
    for p in &points {
        p.validate()?;
    }
    let mut sims = Vec::with_capacity(corpus.len());
    let mut golds = Vec::with_capacity(corpus.len());
    for u in corpus.utterances() {
        let align = u.alignment.as_ref().ok_or_else(|| {
            Error::domain(format!("utterance {:?} has no alignment", u.tensor.utterance_id()))
        })?;
        golds.push(BoundarySet::new(align.boundaries(), align.len())?);
        sims.push(similarity_matrix(&attention_rows_as_features(&u.tensor, head)?)?);
    }

    let widths: BTreeSet<usize> = points.iter().map(|p| p.kernel_width).collect();
    let novelties: Vec<(usize, Vec<Vec<f64>>)> = widths
        .into_par_iter()
        .map(|w| Ok((w, sims.iter().map(|s| novelty_curve(s, w)).collect::<Result<Vec<_>>>()?)))
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<_>>()?;

    let scores: Vec<(SegParams, f64)> = points
        .par_iter()
        .map(|p| {
            let curves = &novelties.iter().find(|(w, _)| *w == p.kernel_width).expect("width computed").1;
            let mut acc = 0.0;
            for (curve, gold) in curves.iter().zip(&golds) {
                let pred = pick_boundaries(curve, p)?;
                acc += evaluate_boundaries(&pred, gold, tolerance).r_value;
            }
            Ok((*p, acc / corpus.len() as f64))
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<_>>()?;

    let best = scores
        .iter()
        .min_by(|(pa, sa), (pb, sb)| {
            sb.total_cmp(sa)
                .then(pa.kernel_width.cmp(&pb.kernel_width))
                .then(pa.min_gap.cmp(&pb.min_gap))
                .then(pa.peak_threshold.total_cmp(&pb.peak_threshold))
        })
        .copied()
        .expect("non-empty grid");
    Ok(TuneResult {
        params: best.0,
        mean_r_value: best.1,
        scores,
    })
}
