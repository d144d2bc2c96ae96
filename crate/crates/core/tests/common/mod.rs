#![allow(dead_code)]

use atlas_core::{AttentionTensor, ValidationMode};
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row-wise softmax of uniform logits in `[-scale, scale]`.
pub fn random_tensor(rng: &mut ChaCha8Rng, id: &str, l: usize, h: usize, t: usize, scale: f64) -> AttentionTensor {
    let mut w = Array4::<f32>::zeros((l, h, t, t));
    for mut row in w.rows_mut() {
        let logits: Vec<f64> = (0..t).map(|_| rng.random_range(-scale..=scale)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        for (v, z) in row.iter_mut().zip(&logits) {
            *v = ((z - max).exp() / s) as f32;
        }
    }
    AttentionTensor::new(id, w, ValidationMode::Strict).unwrap()
}

// Naive references written straight from the metric definitions.

pub fn naive_entropy(p: &[f64]) -> f64 {
    let s: f64 = p.iter().sum();
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            h -= (x / s) * (x / s).ln();
        }
    }
    h
}

pub fn naive_globalness(tensors: &[AttentionTensor], l: usize, h: usize) -> f64 {
    let mut total = 0.0;
    for t in tensors {
        let w = t.weights();
        let n = t.seq_len();
        let mut acc = 0.0;
        for q in 0..n {
            let row: Vec<f64> = (0..n).map(|k| w[[l, h, q, k]] as f64).collect();
            acc += naive_entropy(&row);
        }
        total += acc / n as f64;
    }
    total / tensors.len() as f64
}

pub fn naive_verticality(tensors: &[AttentionTensor], l: usize, h: usize) -> f64 {
    let mut total = 0.0;
    for t in tensors {
        let w = t.weights();
        let n = t.seq_len();
        let mut mean = vec![0.0; n];
        for k in 0..n {
            for q in 0..n {
                mean[k] += w[[l, h, q, k]] as f64;
            }
            mean[k] /= n as f64;
        }
        total += -naive_entropy(&mean);
    }
    total / tensors.len() as f64
}

pub fn naive_diagonality(tensors: &[AttentionTensor], l: usize, h: usize) -> f64 {
    let mut total = 0.0;
    for t in tensors {
        let w = t.weights();
        let n = t.seq_len();
        let mut acc = 0.0;
        for q in 0..n {
            for k in 0..n {
                acc += (q as f64 - k as f64).abs() * w[[l, h, q, k]] as f64;
            }
        }
        total += -acc / (n * n) as f64;
    }
    total / tensors.len() as f64
}

pub fn naive_max_weight(tensors: &[AttentionTensor], l: usize, h: usize) -> f64 {
    let mut total = 0.0;
    for t in tensors {
        let w = t.weights();
        let n = t.seq_len();
        let mut m = 0.0f64;
        for q in 0..n {
            for k in 0..n {
                m = m.max(w[[l, h, q, k]] as f64);
            }
        }
        total += m;
    }
    total / tensors.len() as f64
}
