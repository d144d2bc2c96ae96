//! Per-head globalness, verticality, diagonality and max-weight scores,
//! their rankings, and the rank-based head categorization.
//!
//! All scores are corpus means over utterances, each utterance weighted
//! equally and accumulated in manifest order with `f64` sums. Entropy is in
//! nats unless a base is given; rankings do not depend on the base.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::{all_heads, Corpus, HeadId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "G")]
    Globalness,
    #[serde(rename = "V")]
    Verticality,
    #[serde(rename = "D")]
    Diagonality,
    #[serde(rename = "weight")]
    MaxWeight,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Globalness,
        Metric::Verticality,
        Metric::Diagonality,
        Metric::MaxWeight,
    ];

    pub fn short_name(&self) -> &'static str {
        match self {
            Metric::Globalness => "G",
            Metric::Verticality => "V",
            Metric::Diagonality => "D",
            Metric::MaxWeight => "weight",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "G" | "g" | "globalness" => Ok(Metric::Globalness),
            "V" | "v" | "verticality" => Ok(Metric::Verticality),
            "D" | "d" | "diagonality" => Ok(Metric::Diagonality),
            "weight" | "W" | "max_weight" => Ok(Metric::MaxWeight),
            _ => Err(Error::Parse(format!("unknown metric {s:?} (expected G, V, D or weight)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Global,
    Vertical,
    Diagonal,
}

impl Category {
    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Global => "global",
            Category::Vertical => "vertical",
            Category::Diagonal => "diagonal",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "global" => Ok(Category::Global),
            "vertical" => Ok(Category::Vertical),
            "diagonal" => Ok(Category::Diagonal),
            _ => Err(Error::Parse(format!("unknown category {s:?}"))),
        }
    }
}

/// Shannon entropy in nats of `dist / sum(dist)`, with `0 ln 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    entropy_of(dist.iter().copied(), 1.0)
}

/// Entropy in an arbitrary logarithm base (> 0, != 1).
pub fn entropy_in_base(dist: &[f64], base: f64) -> Result<f64> {
    Ok(entropy(dist)? / log_base_factor(base)?)
}

fn log_base_factor(base: f64) -> Result<f64> {
    if !(base.is_finite() && base > 0.0 && base != 1.0) {
        return Err(Error::domain(format!("invalid logarithm base {base}")));
    }
    Ok(base.ln())
}

/// `ln_base` divides the natural-log result; pass 1.0 for nats.
fn entropy_of<I>(values: I, ln_base: f64) -> Result<f64>
where
    I: Iterator<Item = f64> + Clone,
{
    let mut sum = 0.0;
    for v in values.clone() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::domain(format!("entropy of invalid entry {v}")));
        }
        sum += v;
    }
    if sum <= 0.0 {
        return Err(Error::domain("entropy of an all-zero vector"));
    }
    let h: f64 = values
        .filter(|&v| v > 0.0)
        .map(|v| {
            let p = v / sum;
            -p * p.ln()
        })
        .sum();
    Ok(h / ln_base)
}

/// Mean per-row entropy of one attention map.
pub fn map_globalness(map: ArrayView2<'_, f32>) -> Result<f64> {
    map_globalness_base(map, 1.0)
}

fn map_globalness_base(map: ArrayView2<'_, f32>, ln_base: f64) -> Result<f64> {
    let t = map.nrows();
    let mut acc = 0.0;
    for row in map.outer_iter() {
        acc += entropy_of(row.iter().map(|&w| f64::from(w)), ln_base)?;
    }
    Ok(acc / t as f64)
}

/// Negated entropy of the query-averaged attention row.
pub fn map_verticality(map: ArrayView2<'_, f32>) -> Result<f64> {
    map_verticality_base(map, 1.0)
}

fn map_verticality_base(map: ArrayView2<'_, f32>, ln_base: f64) -> Result<f64> {
    let t = map.nrows();
    let mut mean = vec![0.0f64; map.ncols()];
    for row in map.outer_iter() {
        for (m, &w) in mean.iter_mut().zip(row.iter()) {
            *m += f64::from(w);
        }
    }
    for m in &mut mean {
        *m /= t as f64;
    }
    Ok(-entropy_of(mean.iter().copied(), ln_base)?)
}

/// `-(1/T^2) * sum |q - k| * A[q, k]`, distances in frames.
pub fn map_diagonality(map: ArrayView2<'_, f32>) -> f64 {
    let t = map.nrows();
    let mut acc = 0.0;
    for (q, row) in map.outer_iter().enumerate() {
        for (k, &w) in row.iter().enumerate() {
            acc += q.abs_diff(k) as f64 * f64::from(w);
        }
    }
    -acc / (t * t) as f64
}

pub fn map_max_weight(map: ArrayView2<'_, f32>) -> f64 {
    map.iter().fold(0.0f64, |m, &w| m.max(f64::from(w)))
}

fn corpus_mean<F>(corpus: &Corpus, head: HeadId, mut per_map: F) -> Result<f64>
where
    F: FnMut(ArrayView2<'_, f32>) -> Result<f64>,
{
    corpus.check_head(head)?;
    let mut acc = 0.0;
    for tensor in corpus.tensors() {
        acc += per_map(tensor.map(head))?;
    }
    Ok(acc / corpus.len() as f64)
}

pub fn globalness(head: HeadId, corpus: &Corpus) -> Result<f64> {
    corpus_mean(corpus, head, map_globalness)
}

pub fn verticality(head: HeadId, corpus: &Corpus) -> Result<f64> {
    corpus_mean(corpus, head, map_verticality)
}

pub fn diagonality(head: HeadId, corpus: &Corpus) -> Result<f64> {
    corpus_mean(corpus, head, |m| Ok(map_diagonality(m)))
}

pub fn max_weight_score(head: HeadId, corpus: &Corpus) -> Result<f64> {
    corpus_mean(corpus, head, |m| Ok(map_max_weight(m)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadScores {
    pub head: HeadId,
    pub globalness: f64,
    pub verticality: f64,
    pub diagonality: f64,
    pub max_weight: f64,
}

impl HeadScores {
    pub fn value(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Globalness => self.globalness,
            Metric::Verticality => self.verticality,
            Metric::Diagonality => self.diagonality,
            Metric::MaxWeight => self.max_weight,
        }
    }
}

/// Scores for every head, in (layer, head) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMetrics {
    pub num_layers: usize,
    pub num_heads: usize,
    pub scores: Vec<HeadScores>,
}

impl HeadMetrics {
    pub fn compute(corpus: &Corpus) -> Result<Self> {
        Self::compute_impl(corpus, 1.0)
    }

    /// Same as [`HeadMetrics::compute`] with entropies in `base`.
    pub fn compute_with_base(corpus: &Corpus, base: f64) -> Result<Self> {
        Self::compute_impl(corpus, log_base_factor(base)?)
    }

    fn compute_impl(corpus: &Corpus, ln_base: f64) -> Result<Self> {
        let (num_layers, num_heads) = corpus.require_non_empty()?;
        let heads: Vec<HeadId> = all_heads(num_layers, num_heads).collect();
        let scores = heads
            .par_iter()
            .map(|&head| {
                let n = corpus.len() as f64;
                let (mut g, mut v, mut d, mut w) = (0.0, 0.0, 0.0, 0.0);
                for tensor in corpus.tensors() {
                    let map = tensor.map(head);
                    g += map_globalness_base(map, ln_base)?;
                    v += map_verticality_base(map, ln_base)?;
                    d += map_diagonality(map);
                    w += map_max_weight(map);
                }
                Ok(HeadScores {
                    head,
                    globalness: g / n,
                    verticality: v / n,
                    diagonality: d / n,
                    max_weight: w / n,
                })
            })
            .collect::<Vec<Result<HeadScores>>>()
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            num_layers,
            num_heads,
            scores,
        })
    }

    pub fn get(&self, head: HeadId) -> Option<&HeadScores> {
        head.check_bounds(self.num_layers, self.num_heads).ok()?;
        self.scores.get(head.flat_index(self.num_heads))
    }

    pub fn values(&self, metric: Metric) -> Vec<(HeadId, f64)> {
        self.scores.iter().map(|s| (s.head, s.value(metric))).collect()
    }
}

/// Heads sorted by one metric, largest value first (rank 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankColumn {
    pub metric: Metric,
    order: Vec<HeadId>,
    ranks: BTreeMap<HeadId, usize>,
}

impl RankColumn {
    /// Sorts descending by value; equal values keep (layer, head) order.
    pub fn from_values(metric: Metric, values: &[(HeadId, f64)]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let order: Vec<HeadId> = sorted.into_iter().map(|(h, _)| h).collect();
        let ranks = order.iter().enumerate().map(|(i, &h)| (h, i + 1)).collect();
        Self { metric, order, ranks }
    }

    /// Builds a column from an explicit order (rank 1 first).
    pub fn from_order(metric: Metric, order: Vec<HeadId>) -> Result<Self> {
        let ranks: BTreeMap<HeadId, usize> = order.iter().enumerate().map(|(i, &h)| (h, i + 1)).collect();
        if ranks.len() != order.len() {
            return Err(Error::domain("rank order contains duplicate heads"));
        }
        Ok(Self { metric, order, ranks })
    }

    pub fn order(&self) -> &[HeadId] {
        &self.order
    }

    /// 1-based rank.
    pub fn rank(&self, head: HeadId) -> Option<usize> {
        self.ranks.get(&head).copied()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

pub fn rank_heads(metrics: &HeadMetrics, metric: Metric) -> RankColumn {
    RankColumn::from_values(metric, &metrics.values(metric))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankTable {
    pub globalness: RankColumn,
    pub verticality: RankColumn,
    pub diagonality: RankColumn,
    pub max_weight: RankColumn,
}

impl RankTable {
    pub fn from_metrics(metrics: &HeadMetrics) -> Self {
        Self {
            globalness: rank_heads(metrics, Metric::Globalness),
            verticality: rank_heads(metrics, Metric::Verticality),
            diagonality: rank_heads(metrics, Metric::Diagonality),
            max_weight: rank_heads(metrics, Metric::MaxWeight),
        }
    }

    pub fn column(&self, metric: Metric) -> &RankColumn {
        match metric {
            Metric::Globalness => &self.globalness,
            Metric::Verticality => &self.verticality,
            Metric::Diagonality => &self.diagonality,
            Metric::MaxWeight => &self.max_weight,
        }
    }

    pub fn heads(&self) -> impl Iterator<Item = HeadId> + '_ {
        self.globalness.ranks.keys().copied()
    }
}

/// Category per head, iterated in (layer, head) order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryAssignment(pub BTreeMap<HeadId, Category>);

impl CategoryAssignment {
    pub fn get(&self, head: HeadId) -> Option<Category> {
        self.0.get(&head).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (HeadId, Category)> + '_ {
        self.0.iter().map(|(&h, &c)| (h, c))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self, category: Category) -> usize {
        self.0.values().filter(|&&c| c == category).count()
    }
}

/// Category from three ranks: the metric with the smallest rank number wins;
/// ties resolve Diagonal, then Vertical, then Global.
pub fn category_from_ranks(rank_g: usize, rank_v: usize, rank_d: usize) -> Category {
    let mut best = (rank_d, Category::Diagonal);
    for cand in [(rank_v, Category::Vertical), (rank_g, Category::Global)] {
        if cand.0 < best.0 {
            best = cand;
        }
    }
    best.1
}

pub fn categorize(ranks: &RankTable) -> CategoryAssignment {
    CategoryAssignment(
        ranks
            .heads()
            .filter_map(|h| {
                Some((
                    h,
                    category_from_ranks(
                        ranks.globalness.rank(h)?,
                        ranks.verticality.rank(h)?,
                        ranks.diagonality.rank(h)?,
                    ),
                ))
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankComparison {
    pub head: HeadId,
    pub rank_a: usize,
    pub rank_b: usize,
    /// `rank_a - rank_b`
    pub difference: i64,
}

/// Per-head rank pairs sorted by `|difference|` descending, then head order.
pub fn rank_compare(a: &RankColumn, b: &RankColumn) -> Result<Vec<RankComparison>> {
    if a.ranks.len() != b.ranks.len() || a.ranks.keys().ne(b.ranks.keys()) {
        return Err(Error::domain("rank columns cover different head sets"));
    }
    let mut out: Vec<RankComparison> = a
        .ranks
        .iter()
        .map(|(&head, &rank_a)| {
            let rank_b = b.ranks[&head];
            RankComparison {
                head,
                rank_a,
                rank_b,
                difference: rank_a as i64 - rank_b as i64,
            }
        })
        .collect();
    out.sort_by(|x, y| {
        y.difference
            .unsigned_abs()
            .cmp(&x.difference.unsigned_abs())
            .then(x.head.cmp(&y.head))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::{AttentionTensor, ValidationMode};
    use approx::assert_abs_diff_eq;
    use ndarray::{Array2, Array4};

    fn single_head(map: Array2<f32>) -> Corpus {
        let t = map.nrows();
        let w = map.into_shape_with_order((1, 1, t, t)).unwrap();
        Corpus::from_tensors([AttentionTensor::new("u", w, ValidationMode::Strict).unwrap()]).unwrap()
    }

    const H0: HeadId = HeadId::new(0, 0);

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(entropy(&[0.25; 4]).unwrap(), 4f64.ln(), epsilon = 1e-15);
        // -(0.5 ln 0.5 + 2 * 0.25 ln 0.25) computed by hand
        assert_abs_diff_eq!(entropy(&[0.5, 0.25, 0.25]).unwrap(), 1.039721, epsilon = 1e-6);
        // unnormalized input is normalized by its sum
        assert_abs_diff_eq!(entropy(&[2.0, 1.0, 1.0]).unwrap(), 1.0397207708399179, epsilon = 1e-12);
        assert!(entropy(&[0.0, 0.0]).is_err());
        assert!(entropy(&[0.5, -0.1]).is_err());
        assert_abs_diff_eq!(entropy_in_base(&[0.5, 0.5], 2.0).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn uniform_head_extremes() {
        let c = single_head(Array2::from_elem((4, 4), 0.25));
        assert_abs_diff_eq!(globalness(H0, &c).unwrap(), 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(verticality(H0, &c).unwrap(), -(4f64.ln()), epsilon = 1e-12);
        assert_eq!(max_weight_score(H0, &c).unwrap(), 0.25);
    }

    #[test]
    fn one_hot_same_column() {
        let mut m = Array2::zeros((4, 4));
        m.column_mut(2).fill(1.0);
        let c = single_head(m);
        assert_eq!(globalness(H0, &c).unwrap(), 0.0);
        assert_eq!(verticality(H0, &c).unwrap(), 0.0);
        assert_eq!(max_weight_score(H0, &c).unwrap(), 1.0);
    }

    #[test]
    fn identity_head() {
        let c = single_head(Array2::eye(4));
        assert_eq!(diagonality(H0, &c).unwrap(), 0.0);
        assert_eq!(globalness(H0, &c).unwrap(), 0.0);
        assert_abs_diff_eq!(verticality(H0, &c).unwrap(), -(4f64.ln()), epsilon = 1e-12);
    }

    #[test]
    fn diagonality_examples() {
        let c = single_head(Array2::from_elem((3, 3), 1.0 / 3.0));
        assert_abs_diff_eq!(diagonality(H0, &c).unwrap(), -8.0 / 27.0, epsilon = 1e-7);
        let mut m = Array2::zeros((4, 4));
        for q in 0..3 {
            m[[q, q + 1]] = 1.0;
        }
        m[[3, 3]] = 1.0;
        let c = single_head(m);
        assert_abs_diff_eq!(diagonality(H0, &c).unwrap(), -3.0 / 16.0, epsilon = 1e-15);
    }

    #[test]
    fn max_weight_is_corpus_mean() {
        let mk = |id: &str, p: f32| {
            let w = Array4::from_shape_vec((1, 1, 2, 2), vec![p, 1.0 - p, 0.5, 0.5]).unwrap();
            AttentionTensor::new(id, w, ValidationMode::Strict).unwrap()
        };
        let c = Corpus::from_tensors([mk("a", 0.6), mk("b", 0.8)]).unwrap();
        assert_abs_diff_eq!(max_weight_score(H0, &c).unwrap(), 0.7, epsilon = 1e-7);
    }

    #[test]
    fn empty_corpus_and_bad_head() {
        let c = Corpus::new(vec![]).unwrap();
        assert!(matches!(globalness(H0, &c), Err(Error::Domain(_))));
        assert!(HeadMetrics::compute(&c).is_err());
        let c = single_head(Array2::eye(2));
        assert!(matches!(diagonality(HeadId::new(1, 0), &c), Err(Error::Index(_))));
    }

    #[test]
    fn rank_examples() {
        let v = [(HeadId::new(0, 0), 0.2), (HeadId::new(0, 1), 0.9), (HeadId::new(0, 2), 0.5)];
        let col = RankColumn::from_values(Metric::Globalness, &v);
        assert_eq!(
            v.iter().map(|(h, _)| col.rank(*h).unwrap()).collect::<Vec<_>>(),
            vec![3, 1, 2]
        );
        let tied = [(HeadId::new(1, 0), 0.5), (HeadId::new(0, 1), 0.5), (HeadId::new(0, 0), 0.5)];
        let col = RankColumn::from_values(Metric::Globalness, &tied);
        assert_eq!(col.order(), &[HeadId::new(0, 0), HeadId::new(0, 1), HeadId::new(1, 0)]);
    }

    #[test]
    fn categorize_examples() {
        assert_eq!(category_from_ranks(5, 2, 9), Category::Vertical);
        assert_eq!(category_from_ranks(3, 3, 3), Category::Diagonal);
        assert_eq!(category_from_ranks(2, 2, 3), Category::Vertical);
        assert_eq!(category_from_ranks(1, 2, 3), Category::Global);
    }

    #[test]
    fn rank_compare_examples() {
        let heads: Vec<HeadId> = (0..4).map(|h| HeadId::new(0, h)).collect();
        let a = RankColumn::from_order(Metric::Globalness, heads.clone()).unwrap();
        let same = rank_compare(&a, &a).unwrap();
        assert!(same.iter().all(|r| r.difference == 0));
        let b = RankColumn::from_order(Metric::MaxWeight, heads.iter().rev().copied().collect()).unwrap();
        let mut diffs: Vec<i64> = rank_compare(&a, &b).unwrap().iter().map(|r| r.difference).collect();
        assert_eq!(diffs[..2].iter().map(|d| d.abs()).collect::<Vec<_>>(), vec![3, 3]);
        diffs.sort();
        assert_eq!(diffs, vec![-3, -1, 1, 3]);
        let c = RankColumn::from_order(Metric::MaxWeight, heads[..3].to_vec()).unwrap();
        assert!(rank_compare(&a, &c).is_err());
        assert!(RankColumn::from_order(Metric::MaxWeight, vec![heads[0], heads[0]]).is_err());
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.short_name().parse::<Metric>().unwrap(), m);
        }
        assert!("X".parse::<Metric>().is_err());
    }
}
