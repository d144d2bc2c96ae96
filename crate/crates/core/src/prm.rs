//! Phoneme relation maps.
//!
//! `P'_h[m, n]` is the per-utterance attention mass from frames labelled `m`
//! to frames labelled `n`, divided by `T` and averaged over the corpus. The
//! prior `P_U` is the same quantity for uniform attention, so a head that
//! attends uniformly maps to exactly zero after normalization
//! `P_h = (P'_h - P_U) / P_U`. Cells whose prior is zero (the phone pair never
//! co-occurs) are masked rather than imputed.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::{AlignmentTrack, Corpus, HeadId, PhoneSet, Utterance};

#[derive(Debug, Clone, PartialEq)]
pub struct RelationPrior(pub Array2<f64>);

impl RelationPrior {
    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }
}

/// Normalized map; `defined[[m, n]]` is false where the prior is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeRelationMap {
    pub values: Array2<f64>,
    pub defined: Array2<bool>,
}

impl PhonemeRelationMap {
    pub fn get(&self, m: usize, n: usize) -> Option<f64> {
        self.defined[[m, n]].then(|| self.values[[m, n]])
    }

    pub fn num_phones(&self) -> usize {
        self.values.nrows()
    }

    /// Largest absolute defined value, 0 when nothing is defined.
    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .zip(self.defined.iter())
            .filter(|(_, &d)| d)
            .fold(0.0, |m, (v, _)| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concentration {
    /// Column means of the defined cells; `None` for fully masked columns.
    pub values: Vec<Option<f64>>,
    /// Number of defined cells in each column.
    pub defined_counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tendency {
    Focus,
    Neglect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremeConcentration {
    pub phone: usize,
    pub value: f64,
    pub tendency: Tendency,
}

fn alignment_of(u: &Utterance) -> Result<&AlignmentTrack> {
    u.alignment
        .as_ref()
        .ok_or_else(|| Error::domain(format!("utterance {:?} has no alignment", u.tensor.utterance_id())))
}

fn check_labels(align: &AlignmentTrack, phone_set: &PhoneSet) -> Result<()> {
    if let Some((frame, &id)) = align.labels().iter().enumerate().find(|(_, &id)| id >= phone_set.len()) {
        return Err(Error::Alignment {
            frame,
            message: format!("phone id {id} outside phone set of size {}", phone_set.len()),
        });
    }
    Ok(())
}

/// Prior over phone pairs: per utterance `c_m * c_n / T^2` from the phone
/// frame counts, averaged over utterances.
pub fn relation_prior(corpus: &Corpus, phone_set: &PhoneSet) -> Result<RelationPrior> {
    corpus.require_non_empty()?;
    let y = phone_set.len();
    let mut acc = Array2::<f64>::zeros((y, y));
    for u in corpus.utterances() {
        let align = alignment_of(u)?;
        check_labels(align, phone_set)?;
        let t = align.len() as f64;
        let mut counts = vec![0usize; y];
        for &p in align.labels() {
            counts[p] += 1;
        }
        for (m, &cm) in counts.iter().enumerate().filter(|(_, &c)| c > 0) {
            for (n, &cn) in counts.iter().enumerate().filter(|(_, &c)| c > 0) {
                acc[[m, n]] += (cm * cn) as f64 / (t * t);
            }
        }
    }
    acc /= corpus.len() as f64;
    Ok(RelationPrior(acc))
}

/// `P'_h`: mean over utterances of `(1/T) * sum_{q,k} [y_q = m][y_k = n] A[q, k]`.
pub fn unnormalized_prm(head: HeadId, corpus: &Corpus, phone_set: &PhoneSet) -> Result<Array2<f64>> {
    corpus.check_head(head)?;
    let y = phone_set.len();
    let mut acc = Array2::<f64>::zeros((y, y));
    let mut per_utt = Array2::<f64>::zeros((y, y));
    for u in corpus.utterances() {
        let align = alignment_of(u)?;
        check_labels(align, phone_set)?;
        let t = u.tensor.seq_len();
        if align.len() != t {
            return Err(Error::Alignment {
                frame: align.len().min(t),
                message: format!("alignment has {} frames, tensor has {t}", align.len()),
            });
        }
        let labels = align.labels();
        per_utt.fill(0.0);
        for (q, row) in u.tensor.map(head).outer_iter().enumerate() {
            let m = labels[q];
            for (k, &w) in row.iter().enumerate() {
                per_utt[[m, labels[k]]] += f64::from(w);
            }
        }
        acc.scaled_add(1.0 / t as f64, &per_utt);
    }
    acc /= corpus.len() as f64;
    Ok(acc)
}

/// `(P' - P_U) / P_U` on cells with positive prior.
pub fn normalized_prm(p_prime: &Array2<f64>, prior: &RelationPrior) -> Result<PhonemeRelationMap> {
    if p_prime.dim() != prior.0.dim() {
        return Err(Error::domain(format!(
            "PRM shape {:?} does not match prior shape {:?}",
            p_prime.dim(),
            prior.0.dim()
        )));
    }
    let defined = prior.0.mapv(|p| p > 0.0);
    let mut values = Array2::<f64>::zeros(p_prime.dim());
    ndarray::Zip::from(&mut values)
        .and(p_prime)
        .and(&prior.0)
        .for_each(|v, &pp, &pu| {
            if pu > 0.0 {
                *v = (pp - pu) / pu;
            }
        });
    Ok(PhonemeRelationMap { values, defined })
}

/// Prior and normalized map for one head in one pass.
pub fn phoneme_relation_map(head: HeadId, corpus: &Corpus, phone_set: &PhoneSet) -> Result<PhonemeRelationMap> {
    let prior = relation_prior(corpus, phone_set)?;
    normalized_prm(&unnormalized_prm(head, corpus, phone_set)?, &prior)
}

/// Column means over defined cells. With every cell defined the divisor is
/// the phone-set size.
pub fn concentration(prm: &PhonemeRelationMap) -> Concentration {
    let y = prm.num_phones();
    let mut values = Vec::with_capacity(y);
    let mut defined_counts = Vec::with_capacity(y);
    for n in 0..y {
        let (sum, count) = (0..y)
            .filter_map(|m| prm.get(m, n))
            .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        values.push((count > 0).then(|| sum / count as f64));
        defined_counts.push(count);
    }
    Concentration {
        values,
        defined_counts,
    }
}

/// Entry with the largest magnitude; ties go to the smaller phone id and
/// zero counts as focus.
pub fn extreme_concentration(conc: &Concentration) -> Result<ExtremeConcentration> {
    let mut best: Option<(usize, f64)> = None;
    for (phone, v) in conc.values.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v.abs() > b.abs()) {
                best = Some((phone, v));
            }
        }
    }
    let (phone, value) = best.ok_or_else(|| Error::domain("concentration has no defined entries"))?;
    Ok(ExtremeConcentration {
        phone,
        value,
        tendency: if value < 0.0 { Tendency::Neglect } else { Tendency::Focus },
    })
}
