//! Synthetic attention tensors with known head categories and known phone
//! boundaries. These are the ground truth for testing the analysis modules.

use std::collections::BTreeMap;

use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Category;
use crate::tensorio::{AlignmentTrack, AttentionTensor, HeadId, PhoneSet, ValidationMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadRecipe {
    /// Softmax of i.i.d. zero-mean Gaussian logits with std `noise_scale`.
    Global { noise_scale: f64 },
    /// Every query puts logit `sharpness` on the target columns and 0
    /// elsewhere. An infinite sharpness gives exact mass on the targets; in
    /// JSON it is written as the string `"inf"`.
    Vertical {
        target_columns: Vec<usize>,
        #[serde(with = "sharpness")]
        sharpness: f64,
    },
    /// Uniform mass over a `width`-frame window centered at `q + shift`,
    /// clipped to the sequence and renormalized.
    Diagonal { shift: i64, width: usize },
    /// Uniform within the block containing the query, zero elsewhere.
    BlockDiagonal { boundaries: Vec<usize> },
}

mod sharpness {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) if matches!(t.as_str(), "inf" | "infinity") => Ok(f64::INFINITY),
            Repr::Text(t) => Err(de::Error::custom(format!("sharpness must be a number or \"inf\", got {t:?}"))),
        }
    }
}

impl HeadRecipe {
    pub fn category(&self) -> Category {
        match self {
            HeadRecipe::Global { .. } => Category::Global,
            HeadRecipe::Vertical { .. } => Category::Vertical,
            HeadRecipe::Diagonal { .. } | HeadRecipe::BlockDiagonal { .. } => Category::Diagonal,
        }
    }

    fn validate(&self, seq_len: usize) -> Result<()> {
        match self {
            HeadRecipe::Global { noise_scale } => {
                if !(noise_scale.is_finite() && *noise_scale >= 0.0) {
                    return Err(Error::Spec(format!("noise_scale must be finite and >= 0, got {noise_scale}")));
                }
            }
            HeadRecipe::Vertical {
                target_columns,
                sharpness,
            } => {
                if target_columns.is_empty() {
                    return Err(Error::Spec("vertical recipe needs at least one target column".into()));
                }
                if let Some(c) = target_columns.iter().find(|&&c| c >= seq_len) {
                    return Err(Error::Spec(format!("target column {c} out of range for T={seq_len}")));
                }
                if sharpness.is_nan() || *sharpness < 0.0 {
                    return Err(Error::Spec(format!("sharpness must be >= 0, got {sharpness}")));
                }
            }
            HeadRecipe::Diagonal { shift, width } => {
                if shift.unsigned_abs() as usize >= seq_len {
                    return Err(Error::Spec(format!("|shift| = {} must be < T = {seq_len}", shift.abs())));
                }
                if *width == 0 {
                    return Err(Error::Spec("diagonal width must be >= 1".into()));
                }
            }
            HeadRecipe::BlockDiagonal { boundaries } => {
                let mut prev = 0;
                for &b in boundaries {
                    if b <= prev || b >= seq_len {
                        return Err(Error::Spec(format!(
                            "block boundaries must be strictly increasing within (0, {seq_len}), got {boundaries:?}"
                        )));
                    }
                    prev = b;
                }
            }
        }
        Ok(())
    }

    fn fill(&self, map: &mut Array2<f64>, rng: &mut ChaCha8Rng) -> Result<()> {
        let t = map.nrows();
        match self {
            HeadRecipe::Global { noise_scale } => {
                let normal = Normal::new(0.0, *noise_scale).map_err(|e| Error::Spec(e.to_string()))?;
                for mut row in map.rows_mut() {
                    for v in row.iter_mut() {
                        *v = normal.sample(rng);
                    }
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    row.mapv_inplace(|z| (z - max).exp());
                    let sum = row.sum();
                    row.mapv_inplace(|e| e / sum);
                }
            }
            HeadRecipe::Vertical {
                target_columns,
                sharpness,
            } => {
                let mut is_target = vec![false; t];
                for &c in target_columns {
                    is_target[c] = true;
                }
                let n_targets = is_target.iter().filter(|&&b| b).count() as f64;
                // softmax with the target logit factored out
                let off = (-sharpness).exp();
                let z = n_targets + (t as f64 - n_targets) * off;
                for mut row in map.rows_mut() {
                    for (k, v) in row.iter_mut().enumerate() {
                        *v = if is_target[k] { 1.0 / z } else { off / z };
                    }
                }
            }
            HeadRecipe::Diagonal { shift, width } => {
                let lo_off = ((width - 1) / 2) as i64;
                let hi_off = (width / 2) as i64;
                for (q, mut row) in map.rows_mut().into_iter().enumerate() {
                    let center = q as i64 + shift;
                    let lo = (center - lo_off).max(0);
                    let hi = (center + hi_off).min(t as i64 - 1);
                    row.fill(0.0);
                    if lo > hi {
                        row[center.clamp(0, t as i64 - 1) as usize] = 1.0;
                    } else {
                        let mass = 1.0 / (hi - lo + 1) as f64;
                        for k in lo..=hi {
                            row[k as usize] = mass;
                        }
                    }
                }
            }
            HeadRecipe::BlockDiagonal { boundaries } => {
                let blocks = block_spans(boundaries, t);
                map.fill(0.0);
                for &(start, end) in &blocks {
                    let mass = 1.0 / (end - start) as f64;
                    for q in start..end {
                        for k in start..end {
                            map[[q, k]] = mass;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn block_spans(boundaries: &[usize], seq_len: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(boundaries.len() + 2);
    edges.push(0);
    edges.extend_from_slice(boundaries);
    edges.push(seq_len);
    edges.windows(2).map(|w| (w[0], w[1])).collect()
}

fn default_layers() -> usize {
    1
}

/// Recipes are listed in (layer, head) row-major order; the head count per
/// layer is `heads.len() / num_layers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seq_len: usize,
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    pub heads: Vec<HeadRecipe>,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::Spec("seq_len must be positive".into()));
        }
        if self.num_layers == 0 || self.heads.is_empty() || !self.heads.len().is_multiple_of(self.num_layers) {
            return Err(Error::Spec(format!(
                "{} recipes cannot be split evenly over {} layers",
                self.heads.len(),
                self.num_layers
            )));
        }
        self.heads.iter().try_for_each(|r| r.validate(self.seq_len))
    }

    pub fn heads_per_layer(&self) -> usize {
        self.heads.len() / self.num_layers.max(1)
    }

    pub fn labels(&self) -> BTreeMap<HeadId, Category> {
        let per_layer = self.heads_per_layer();
        self.heads
            .iter()
            .enumerate()
            .map(|(i, r)| (HeadId::from_flat_index(i, per_layer), r.category()))
            .collect()
    }

    /// Boundaries of the first block-diagonal recipe, if any.
    pub fn reference_boundaries(&self) -> Option<&[usize]> {
        self.heads.iter().find_map(|r| match r {
            HeadRecipe::BlockDiagonal { boundaries } => Some(boundaries.as_slice()),
            _ => None,
        })
    }

    /// Phones `p0, p1, ...`, one per block of the reference boundaries.
    pub fn phone_set(&self) -> Option<PhoneSet> {
        let n = self.reference_boundaries()?.len() + 1;
        PhoneSet::new((0..n).map(|i| format!("p{i}"))).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub tensor: AttentionTensor,
    /// Block labels of the first block-diagonal recipe.
    pub alignment: Option<AlignmentTrack>,
    pub phone_set: Option<PhoneSet>,
    pub labels: BTreeMap<HeadId, Category>,
}

/// One utterance with id `"synth"`, seeded directly by `spec.seed`.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    generate_utterance(spec, 0, "synth")
}

/// `count` utterances `synth_0000, synth_0001, ...`; utterance `i` draws
/// from ChaCha stream `i` of the spec seed.
pub fn generate_corpus(spec: &SynthSpec, count: usize) -> Result<Vec<SynthOutput>> {
    (0..count)
        .map(|i| generate_utterance(spec, i as u64, &format!("synth_{i:04}")))
        .collect()
}

fn generate_utterance(spec: &SynthSpec, stream: u64, id: &str) -> Result<SynthOutput> {
    spec.validate()?;
    let t = spec.seq_len;
    let per_layer = spec.heads_per_layer();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let mut weights = Array4::<f32>::zeros((spec.num_layers, per_layer, t, t));
    let mut map = Array2::<f64>::zeros((t, t));
    for (i, recipe) in spec.heads.iter().enumerate() {
        recipe.fill(&mut map, &mut rng)?;
        let head = HeadId::from_flat_index(i, per_layer);
        weights
            .index_axis_mut(ndarray::Axis(0), head.layer)
            .index_axis_mut(ndarray::Axis(0), head.head)
            .zip_mut_with(&map, |w, &v| *w = v as f32);
    }
    let tensor = AttentionTensor::new(id, weights, ValidationMode::Strict)?;
    let phone_set = spec.phone_set();
    let alignment = match (spec.reference_boundaries(), &phone_set) {
        (Some(bounds), Some(phones)) => {
            let mut labels = Vec::with_capacity(t);
            for (block, (start, end)) in block_spans(bounds, t).into_iter().enumerate() {
                labels.extend(std::iter::repeat_n(block, end - start));
            }
            Some(AlignmentTrack::new(id, labels, phones)?)
        }
        _ => None,
    };
    Ok(SynthOutput {
        tensor,
        alignment,
        phone_set,
        labels: spec.labels(),
    })
}
