use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use atlas_core::synthgen::{HeadRecipe, SynthSpec};
use atlas_core::tensorio::{read_attention, write_attention, write_attention_lax};
use atlas_core::{AttentionTensor, PruneMask, ValidationMode};
use ndarray::Array4;

fn atlas(args: &[&str]) -> i32 {
    let argv = std::iter::once("atlas").chain(args.iter().copied());
    atlas_cli::run(argv)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn well_separated_spec() -> SynthSpec {
    let mut heads = Vec::new();
    for i in 0..4usize {
        heads.push(HeadRecipe::Global { noise_scale: 0.1 });
        heads.push(HeadRecipe::Vertical {
            target_columns: vec![(11 * i + 5) % 40],
            sharpness: 12.0,
        });
        heads.push(HeadRecipe::Diagonal {
            shift: i as i64 - 1,
            width: 1 + i % 2,
        });
    }
    heads.push(HeadRecipe::BlockDiagonal {
        boundaries: vec![8, 16, 24, 32],
    });
    heads.push(HeadRecipe::Global { noise_scale: 0.1 });
    heads.push(HeadRecipe::Vertical {
        target_columns: vec![9, 10, 11, 12, 13, 14, 15],
        sharpness: f64::INFINITY,
    });
    SynthSpec {
        seq_len: 40,
        num_layers: 5,
        heads,
        seed: 11,
    }
}

fn synth_corpus(dir: &Path, spec: &SynthSpec, utterances: usize) -> PathBuf {
    let spec_path = dir.join("spec.json");
    fs::write(&spec_path, serde_json::to_vec(spec).unwrap()).unwrap();
    let out = dir.join("corpus");
    assert_eq!(
        atlas(&["synth", "--spec", p(&spec_path), "--utterances", &utterances.to_string(), "--out", p(&out)]),
        0
    );
    out
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let headers = rdr.headers().unwrap().clone();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            headers.iter().map(String::from).zip(r.iter().map(String::from)).collect()
        })
        .collect()
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn validate_accepts_strict_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.atns");
    let t = AttentionTensor::from_vec("u", 1, 1, 2, vec![0.5, 0.5, 0.25, 0.75], ValidationMode::Strict).unwrap();
    write_attention(&t, fs::File::create(&path).unwrap()).unwrap();
    assert_eq!(atlas(&["validate", p(&path)]), 0);
}

#[test]
fn validate_rejects_lax_file_unless_asked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.atns");
    let w = Array4::from_shape_vec((1, 1, 2, 2), vec![0.5f32, 0.0, 0.25, 0.75]).unwrap();
    let t = AttentionTensor::new("u", w, ValidationMode::Lax).unwrap();
    write_attention_lax(&t, fs::File::create(&path).unwrap()).unwrap();
    assert_eq!(atlas(&["validate", p(&path)]), 1);
    assert_eq!(atlas(&["validate", "--lax", p(&path)]), 0);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(atlas(&["metrics", "--out", "/nonexistent"]), 2);
    assert_eq!(atlas(&["frobnicate"]), 2);
    assert_eq!(atlas(&["metrics", "--manifest", "m.jsonl", "--out", "o", "--bogus"]), 2);
    assert_eq!(atlas(&[]), 2);
    assert_eq!(atlas(&["validate", "/definitely/not/here.atns"]), 2);
}

#[test]
fn binary_exit_codes_and_usage_text() {
    let bin = env!("CARGO_BIN_EXE_atlas");
    let out = Command::new(bin).args(["metrics"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--manifest") && stderr.contains("Usage"), "{stderr}");

    let help = Command::new(bin).args(["segment", "--help"]).output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for flag in ["--head", "--kernel-width", "--threshold", "--min-gap", "--frame-shift-ms", "--tolerance-ms", "--gold"] {
        assert!(text.contains(flag), "missing {flag} in help");
    }

    let bad_env = Command::new(bin)
        .env("ATLAS_PARALLELISM", "0")
        .args(["validate", "x.atns"])
        .output()
        .unwrap();
    assert_eq!(bad_env.status.code(), Some(2));
}

#[test]
fn synth_metrics_categorize_recovers_labels() {
    let dir = tempfile::tempdir().unwrap();
    let spec = well_separated_spec();
    let corpus = synth_corpus(dir.path(), &spec, 4);
    let res = dir.path().join("res");
    assert_eq!(atlas(&["metrics", "--manifest", p(&corpus.join("manifest.jsonl")), "--out", p(&res)]), 0);
    assert_eq!(atlas(&["categorize", "--metrics", p(&res.join("metrics.csv")), "--out", p(&res)]), 0);

    let labels: BTreeMap<String, String> =
        serde_json::from_slice(&fs::read(corpus.join("labels.json")).unwrap()).unwrap();
    let per_layer = spec.heads_per_layer();
    let rows = read_csv(&res.join("categories.csv"));
    assert_eq!(rows.len(), labels.len());
    for row in rows {
        let flat = row["layer"].parse::<usize>().unwrap() * per_layer + row["head"].parse::<usize>().unwrap();
        assert_eq!(row["category"], labels[&flat.to_string()], "head index {flat}");
    }

    let metrics = read_csv(&res.join("metrics.csv"));
    let header: Vec<&str> = metrics[0].keys().map(String::as_str).collect();
    let mut expected = vec![
        "layer", "head", "G", "V", "D", "max_weight", "rank_G", "rank_V", "rank_D", "rank_weight", "category",
    ];
    expected.sort();
    assert_eq!(header, expected);
}

#[test]
fn pipeline_outputs_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let spec = well_separated_spec();
    let corpus = synth_corpus(dir.path(), &spec, 3);
    let manifest = corpus.join("manifest.jsonl");
    let phones = corpus.join("phones.txt");
    let before = snapshot(&corpus);
    let out = dir.path().join("out");

    // segmentation of the block-diagonal head (layer 4, head 0)
    let seg = out.join("seg");
    let code = atlas(&[
        "segment", "--attn", p(&corpus.join("synth_0001.atns")), "--head", "4:0", "--kernel-width", "4",
        "--threshold", "0.1", "--min-gap", "2", "--frame-shift-ms", "12.5", "--gold",
        p(&corpus.join("synth_0001.tsv")), "--phones", p(&phones), "--out", p(&seg),
    ]);
    assert_eq!(code, 0);
    let eval: serde_json::Value = serde_json::from_slice(&fs::read(seg.join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["schema_version"], 1);
    assert_eq!(eval["tolerance_frames"], 1);
    assert_eq!(eval["r_value"], 1.0);
    assert_eq!(eval["r_value_percent"], 100.0);
    let tsv = fs::read_to_string(seg.join("boundaries.tsv")).unwrap();
    let frames: Vec<&str> = tsv.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(frames, ["8", "16", "24", "32"]);

    // PRM of the fully sharp vertical head: phone p1 (frames 8..16) holds the target columns 9..15
    let prm = out.join("prm");
    assert_eq!(
        atlas(&["prm", "--manifest", p(&manifest), "--phones", p(&phones), "--head", "4:2", "--pgm", "--out", p(&prm)]),
        0
    );
    let conc: serde_json::Value = serde_json::from_slice(&fs::read(prm.join("concentration.json")).unwrap()).unwrap();
    assert_eq!(conc["extreme"]["phone"], "p1");
    assert_eq!(conc["extreme"]["tendency"], "focus");
    assert!(fs::read(prm.join("prm.pgm")).unwrap().starts_with(b"P5\n5 5\n255\n"));

    // head pruning: nested masks of the requested sizes
    let ph = out.join("ph");
    assert_eq!(
        atlas(&[
            "prune-heads", "--manifest", p(&manifest), "--metric", "weight", "--step", "3", "--steps", "4", "--emit",
            "tensors", "--out", p(&ph),
        ]),
        0
    );
    let masks: Vec<PruneMask> = (1..=4)
        .map(|i| serde_json::from_slice(&fs::read(ph.join(format!("mask_{i:02}.json"))).unwrap()).unwrap())
        .collect();
    for (i, m) in masks.iter().enumerate() {
        assert_eq!(m.len(), 3 * (i + 1));
        if i > 0 {
            assert!(masks[i - 1].is_subset(m));
        }
    }
    let pruned = read_attention(
        fs::File::open(ph.join("step_02").join("synth_0000.atns")).unwrap(),
        ValidationMode::Lax,
    )
    .unwrap();
    for head in masks[1].heads() {
        assert!(pruned.map(head).iter().all(|&v| v == 0.0));
    }
    assert_eq!(
        fs::read(ph.join("step_02").join("synth_0000.tsv")).unwrap(),
        fs::read(corpus.join("synth_0000.tsv")).unwrap()
    );

    // span pruning with renormalization: every row sums to 1, or to 0 when it lost everything
    let ps = out.join("ps");
    assert_eq!(
        atlas(&["prune-span", "--manifest", p(&manifest), "--r", "1", "--renormalize", "--out", p(&ps)]),
        0
    );
    assert_eq!(atlas(&["validate", "--manifest", p(&ps.join("manifest.jsonl")), "--phones", p(&phones)]), 1);
    assert_eq!(
        atlas(&["validate", "--lax", "--manifest", p(&ps.join("manifest.jsonl")), "--phones", p(&phones)]),
        0
    );
    let t = read_attention(fs::File::open(ps.join("synth_0002.atns")).unwrap(), ValidationMode::Lax).unwrap();
    let mut empty_rows = 0;
    for row in t.weights().rows() {
        let s: f64 = row.iter().map(|&v| f64::from(v)).sum();
        assert!(s == 0.0 || (s - 1.0).abs() < 1e-6, "row sum {s}");
        empty_rows += usize::from(s == 0.0);
    }
    assert!(empty_rows > 0);

    // inputs untouched
    assert_eq!(before, snapshot(&corpus));
}

#[test]
fn prm_marks_unused_phones_na() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), &well_separated_spec(), 2);
    let phones = dir.path().join("phones_plus.txt");
    fs::write(&phones, "p0\np1\np2\np3\np4\nunused\n").unwrap();
    let out = dir.path().join("prm");
    let code = atlas(&[
        "prm", "--manifest", p(&corpus.join("manifest.jsonl")), "--phones", p(&phones), "--head", "0:0", "--out", p(&out),
    ]);
    assert_eq!(code, 0);
    let rows = read_csv(&out.join("prm.csv"));
    assert_eq!(rows.len(), 6);
    for row in &rows {
        assert_eq!(row["unused"], "NA");
    }
    assert!(rows[5].iter().filter(|(k, _)| *k != "phone").all(|(_, v)| v == "NA"));
    let conc: serde_json::Value = serde_json::from_slice(&fs::read(out.join("concentration.json")).unwrap()).unwrap();
    assert!(conc["concentration"][5]["value"].is_null());
    assert_eq!(conc["concentration"][5]["defined_cells"], 0);
}

#[test]
fn tune_and_rank_compare() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), &well_separated_spec(), 2);
    let grid = dir.path().join("grid.json");
    fs::write(&grid, r#"{"kernel_widths": [2, 4], "thresholds": [0.1, 5.0], "min_gaps": [2]}"#).unwrap();
    let out = dir.path().join("out");
    let code = atlas(&[
        "tune", "--manifest", p(&corpus.join("manifest.jsonl")), "--phones", p(&corpus.join("phones.txt")), "--head",
        "4:0", "--grid", p(&grid), "--frame-shift-ms", "10", "--tolerance-ms", "0", "--out", p(&out),
    ]);
    assert_eq!(code, 0);
    let tuned: serde_json::Value = serde_json::from_slice(&fs::read(out.join("tuned.json")).unwrap()).unwrap();
    assert_eq!(tuned["kernel_width"], 2);
    assert_eq!(tuned["threshold"], 0.1);
    assert_eq!(tuned["mean_r_value"], 1.0);
    assert_eq!(tuned["grid"].as_array().unwrap().len(), 4);

    assert_eq!(atlas(&["metrics", "--manifest", p(&corpus.join("manifest.jsonl")), "--out", p(&out)]), 0);
    let metrics = p(&out.join("metrics.csv")).to_string();
    assert_eq!(atlas(&["rank-compare", "--metrics", &metrics, "--a", "G", "--b", "G", "--out", p(&out)]), 0);
    assert!(read_csv(&out.join("rank_compare.csv")).iter().all(|r| r["difference"] == "0"));
    assert_eq!(atlas(&["rank-compare", "--metrics", &metrics, "--a", "G", "--b", "weight", "--out", p(&out)]), 0);
    let diffs: Vec<i64> = read_csv(&out.join("rank_compare.csv"))
        .iter()
        .map(|r| r["difference"].parse().unwrap())
        .collect();
    assert!(diffs.windows(2).all(|w| w[0].abs() >= w[1].abs()));
}

#[test]
fn domain_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), &well_separated_spec(), 1);
    let out = dir.path().join("out");
    // 15 heads cannot be pruned 7 at a time for 3 steps
    let code = atlas(&[
        "prune-heads", "--manifest", p(&corpus.join("manifest.jsonl")), "--metric", "G", "--step", "7", "--steps", "3",
        "--out", p(&out),
    ]);
    assert_eq!(code, 1);
    // kernel wider than half the sequence
    let code = atlas(&[
        "segment", "--attn", p(&corpus.join("synth_0000.atns")), "--head", "0:0", "--kernel-width", "30",
        "--threshold", "0", "--frame-shift-ms", "10", "--out", p(&out),
    ]);
    assert_eq!(code, 1);
    let bad = dir.path().join("bad.atns");
    fs::write(&bad, b"ATNX\x01\x00\x00\x00").unwrap();
    assert_eq!(atlas(&["validate", p(&bad)]), 1);
}

#[test]
fn render_writes_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eye.atns");
    let t = AttentionTensor::new("eye", Array4::from_shape_fn((1, 1, 4, 4), |(_, _, q, k)| f32::from(q == k)), ValidationMode::Strict)
        .unwrap();
    write_attention(&t, fs::File::create(&path).unwrap()).unwrap();
    let out = dir.path().join("img");
    assert_eq!(atlas(&["render", "--attn", p(&path), "--head", "0:0", "--out", p(&out)]), 0);
    let bytes = fs::read(out.join("attention_0-0.pgm")).unwrap();
    let header = b"P5\n4 4\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    let pixels = &bytes[header.len()..];
    for (i, &px) in pixels.iter().enumerate() {
        assert_eq!(px, if i / 4 == i % 4 { 255 } else { 0 });
    }
    assert_eq!(atlas(&["render", "--attn", p(&path), "--head", "0:0", "--clamp", "-1", "--out", p(&out)]), 2);
}
