mod common;

use atlas_core::pruning::{span_prune, SpanLimit};
use atlas_core::tensorio::{read_attention, write_attention, write_attention_lax};
use atlas_core::{Error, ValidationMode};
use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_is_bit_exact(seed in any::<u64>(), scale in 0.0f64..20.0) {
        let mut rng = rng(seed);
        let t = random_tensor(&mut rng, "round-trip", 2, 3, 8, scale);
        let mut bytes = Vec::new();
        write_attention(&t, &mut bytes).unwrap();
        prop_assert_eq!(bytes.len(), 24 + "round-trip".len() + 2 * 3 * 8 * 8 * 4);
        let back = read_attention(bytes.as_slice(), ValidationMode::Strict).unwrap();
        let mut again = Vec::new();
        write_attention(&back, &mut again).unwrap();
        prop_assert_eq!(&bytes, &again);
        for (a, b) in t.weights().iter().zip(back.weights().iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn softmax_of_any_finite_logits_is_strict_valid(seed in any::<u64>(), t in 1usize..40, scale in 0.0f64..80.0) {
        let mut rng = rng(seed);
        let tensor = random_tensor(&mut rng, "s", 1, 2, t, scale);
        prop_assert!(tensor.validate(ValidationMode::Strict).is_ok());
    }
}

#[test]
fn span_pruned_tensor_needs_lax_mode() {
    let mut rng = rng(77);
    let t = random_tensor(&mut rng, "u", 1, 2, 6, 1.0);
    let pruned = span_prune(&t, SpanLimit { r: 1, renormalize: false });
    let mut bytes = Vec::new();
    assert!(write_attention(&pruned, &mut bytes).is_err());
    write_attention_lax(&pruned, &mut bytes).unwrap();
    assert!(matches!(
        read_attention(bytes.as_slice(), ValidationMode::Strict),
        Err(Error::Validation { .. })
    ));
    assert_eq!(read_attention(bytes.as_slice(), ValidationMode::Lax).unwrap(), pruned);
}

#[test]
fn corpus_load_from_disk() {
    use atlas_core::tensorio::{write_alignment, CorpusManifest, ManifestEntry};
    use atlas_core::{AlignmentTrack, Corpus, PhoneSet};

    let dir = tempfile::tempdir().unwrap();
    let phones = PhoneSet::parse("sil\na\n").unwrap();
    let mut rng = rng(5);
    let mut entries = Vec::new();
    for i in 0..3 {
        let id = format!("utt{i}");
        let t = random_tensor(&mut rng, &id, 1, 2, 4 + i, 1.0);
        write_attention(&t, std::fs::File::create(dir.path().join(format!("{id}.atns"))).unwrap()).unwrap();
        let labels: Vec<usize> = (0..4 + i).map(|f| usize::from(f >= 2)).collect();
        let track = AlignmentTrack::new(&id, labels, &phones).unwrap();
        write_alignment(&track, &phones, std::fs::File::create(dir.path().join(format!("{id}.tsv"))).unwrap()).unwrap();
        entries.push(ManifestEntry {
            id: id.clone(),
            attn: format!("{id}.atns").into(),
            align: Some(format!("{id}.tsv").into()),
        });
    }
    let manifest = CorpusManifest::new(entries, dir.path()).unwrap();
    let path = dir.path().join("manifest.jsonl");
    manifest.write(std::fs::File::create(&path).unwrap()).unwrap();

    let loaded = CorpusManifest::read(&path).unwrap();
    let corpus = Corpus::load(&loaded, Some(&phones), ValidationMode::Strict).unwrap();
    let ids: Vec<&str> = corpus.tensors().map(|t| t.utterance_id()).collect();
    assert_eq!(ids, vec!["utt0", "utt1", "utt2"]);
    assert_eq!(corpus.utterances()[2].alignment.as_ref().unwrap().boundaries(), vec![2]);

    let without = Corpus::load(&loaded, None, ValidationMode::Strict).unwrap();
    assert!(without.utterances().iter().all(|u| u.alignment.is_none()));
}
