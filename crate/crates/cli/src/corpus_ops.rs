use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use anyhow::{Context, Result};
use atlas_core::metrics::{rank_heads, HeadMetrics};
use atlas_core::pruning::{apply_schedule, make_schedule, prune_corpus, span_prune, SpanLimit};
use atlas_core::render::render_map;
use atlas_core::segmentation::{attention_rows_as_features, similarity_matrix};
use atlas_core::synthgen::{generate_corpus, SynthSpec};
use atlas_core::tensorio::{read_attention, read_features, ATNS_VERSION_FEATURES};
use atlas_core::{Category, Corpus, CorpusManifest, HeadId, PruneMask, ValidationMode};
use rayon::prelude::*;
use serde::Serialize;

use crate::output::{self, AlignSource, SCHEMA_VERSION};
use crate::{usage, Emit, PruneHeadsArgs, PruneSpanArgs, RenderArgs, SynthArgs, ValidateArgs};

#[derive(Serialize)]
struct ScheduleJson<'a> {
    schema_version: u32,
    metric: &'a str,
    step: usize,
    steps: usize,
    order: &'a [HeadId],
}

pub fn prune_heads(args: &PruneHeadsArgs) -> Result<()> {
    let (manifest, corpus) = output::load_corpus(&args.corpus, None)?;
    let ranks = rank_heads(&HeadMetrics::compute(&corpus)?, args.metric);
    let schedule = make_schedule(&ranks, args.step)?;
    let masks = apply_schedule(&schedule, args.steps)?;
    let dir = output::out_dir(&args.out)?;
    output::write_json(
        &dir.join("schedule.json"),
        &ScheduleJson {
            schema_version: SCHEMA_VERSION,
            metric: args.metric.short_name(),
            step: args.step,
            steps: args.steps,
            order: &schedule.order,
        },
    )?;
    for (i, mask) in masks.iter().enumerate() {
        let step = i + 1;
        output::write_json(&dir.join(format!("mask_{step:02}.json")), mask)?;
        if args.emit == Emit::Tensors {
            let step_dir = dir.join(format!("step_{step:02}"));
            write_pruned(output::out_dir(&step_dir)?, &manifest, &corpus, mask)?;
        }
        eprintln!("step {step}: {} heads pruned", mask.len());
    }
    Ok(())
}

fn write_pruned(dir: &Path, manifest: &CorpusManifest, corpus: &Corpus, mask: &PruneMask) -> Result<()> {
    let pruned = prune_corpus(corpus, mask)?;
    output::write_corpus(dir, pruned.iter().zip(output::copied_alignments(manifest)))?;
    Ok(())
}

pub fn prune_span(args: &PruneSpanArgs) -> Result<()> {
    let (manifest, corpus) = output::load_corpus(&args.corpus, None)?;
    let limit = SpanLimit {
        r: args.r,
        renormalize: args.renormalize,
    };
    let pruned: Vec<_> = corpus.utterances().par_iter().map(|u| span_prune(&u.tensor, limit)).collect();
    let dir = output::out_dir(&args.out)?;
    let n = output::write_corpus(dir, pruned.iter().zip(output::copied_alignments(&manifest)))?;
    eprintln!("span-pruned {n} utterances at r = {}", args.r);
    Ok(())
}

fn open(path: &Path) -> Result<fs::File> {
    output::require_input(path)?;
    fs::File::open(path).with_context(|| format!("opening {}", path.display()))
}

pub fn render(args: &RenderArgs) -> Result<()> {
    let (name, matrix) = match (&args.attn, &args.features) {
        (Some(path), _) => {
            let head = args.head.expect("clap requires --head with --attn");
            let tensor = read_attention(BufReader::new(open(path)?), ValidationMode::Lax)
                .with_context(|| format!("reading {}", path.display()))?;
            tensor.check_head(head)?;
            let tag = format!("{}-{}", head.layer, head.head);
            if args.similarity {
                let sim = similarity_matrix(&attention_rows_as_features(&tensor, head)?)?;
                (format!("similarity_{tag}.pgm"), sim.0)
            } else {
                (format!("attention_{tag}.pgm"), tensor.map(head).mapv(f64::from))
            }
        }
        (None, Some(path)) => {
            let (_, features) = read_features(BufReader::new(open(path)?))
                .with_context(|| format!("reading {}", path.display()))?;
            ("similarity.pgm".to_string(), similarity_matrix(&features)?.0)
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    if let Some(c) = args.clamp {
        if !(c.is_finite() && c > 0.0) {
            return Err(usage(format!("--clamp must be positive, got {c}")));
        }
    }
    let image = render_map(matrix.view(), args.scale.into(), args.clamp)?;
    let dir = output::out_dir(&args.out)?;
    output::write_bytes(&dir.join(&name), &image)?;
    eprintln!("wrote {name} ({}x{})", matrix.ncols(), matrix.nrows());
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    if args.utterances == 0 {
        return Err(usage("--utterances must be at least 1"));
    }
    let spec: SynthSpec = serde_json::from_reader(BufReader::new(open(&args.spec)?))
        .with_context(|| format!("parsing {}", args.spec.display()))?;
    let outputs = generate_corpus(&spec, args.utterances)?;
    let dir = output::out_dir(&args.out)?;
    let phones = spec.phone_set();
    if let Some(p) = &phones {
        output::write_bytes(&dir.join("phones.txt"), p.to_text().as_bytes())?;
    }
    output::write_corpus(
        dir,
        outputs.iter().map(|o| {
            let source = match (&o.alignment, &phones) {
                (Some(track), Some(p)) => AlignSource::Track(track, p),
                _ => AlignSource::None,
            };
            (&o.tensor, source)
        }),
    )?;
    let per_layer = spec.heads_per_layer();
    let labels: BTreeMap<usize, Category> =
        spec.labels().into_iter().map(|(h, c)| (h.flat_index(per_layer), c)).collect();
    output::write_json(&dir.join("labels.json"), &labels)?;
    eprintln!(
        "generated {} utterances, {} layers x {per_layer} heads, T = {}",
        outputs.len(),
        spec.num_layers,
        spec.seq_len
    );
    Ok(())
}

pub fn validate(args: &ValidateArgs) -> Result<()> {
    let mode = if args.lax { ValidationMode::Lax } else { ValidationMode::Strict };
    for path in &args.files {
        let bytes = {
            output::require_input(path)?;
            fs::read(path).with_context(|| format!("reading {}", path.display()))?
        };
        let is_features = bytes.get(4..8) == Some(&ATNS_VERSION_FEATURES.to_le_bytes()[..]);
        if is_features {
            let (id, f) = read_features(bytes.as_slice()).with_context(|| format!("{}", path.display()))?;
            eprintln!("{}: ok ({id}, features {} x {})", path.display(), f.len(), f.dim());
        } else {
            let t = read_attention(bytes.as_slice(), mode).with_context(|| format!("{}", path.display()))?;
            eprintln!(
                "{}: ok ({}, {} layers x {} heads, T = {})",
                path.display(),
                t.utterance_id(),
                t.num_layers(),
                t.num_heads(),
                t.seq_len()
            );
        }
    }
    if let Some(manifest_path) = &args.manifest {
        let phones = args.phones.as_deref().map(output::read_phones).transpose()?;
        let manifest = output::read_manifest(manifest_path)?;
        let corpus = Corpus::load(&manifest, phones.as_ref(), mode)?;
        eprintln!("{}: ok ({} utterances)", manifest_path.display(), corpus.len());
    }
    Ok(())
}
