//! Fixtures shared by the criterion benches.

use atlas_core::synthgen::{generate_corpus, HeadRecipe, SynthSpec};
use atlas_core::{Corpus, Utterance};

/// A 12-head corpus mixing every recipe, with block-diagonal alignments.
pub fn mixed_corpus(seq_len: usize, utterances: usize) -> Corpus {
    let step = seq_len / 6;
    let boundaries: Vec<usize> = (1..6).map(|i| i * step).collect();
    let mut heads = Vec::new();
    for i in 0..3 {
        heads.push(HeadRecipe::Global { noise_scale: 0.1 });
        heads.push(HeadRecipe::Vertical {
            target_columns: vec![i * 5 % seq_len],
            sharpness: 10.0,
        });
        heads.push(HeadRecipe::Diagonal {
            shift: i as i64 - 1,
            width: 3,
        });
        heads.push(HeadRecipe::BlockDiagonal {
            boundaries: boundaries.clone(),
        });
    }
    let spec = SynthSpec {
        seq_len,
        num_layers: 2,
        heads,
        seed: 1234,
    };
    let outs = generate_corpus(&spec, utterances).expect("valid bench spec");
    Corpus::new(
        outs.into_iter()
            .map(|o| Utterance {
                tensor: o.tensor,
                alignment: o.alignment,
            })
            .collect(),
    )
    .expect("consistent corpus")
}
