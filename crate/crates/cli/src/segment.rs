use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{Context, Result};
use atlas_core::segmentation::{
    attention_rows_as_features, evaluate_boundaries, ms_to_frames, segment_features, tune_segmentation_params,
    SegEvalResult, SegParams, TuneGrid,
};
use atlas_core::tensorio::{read_alignment, read_attention, read_features};
use atlas_core::{BoundarySet, FeatureSequence, ValidationMode};
use serde::Serialize;

use crate::output::{self, SCHEMA_VERSION};
use crate::{usage, SegmentArgs, TuneArgs};

fn tolerance_frames(tolerance_ms: f64, frame_shift_ms: f64) -> Result<usize> {
    if !(frame_shift_ms.is_finite() && frame_shift_ms > 0.0) {
        return Err(usage(format!("--frame-shift-ms must be positive, got {frame_shift_ms}")));
    }
    if !(tolerance_ms.is_finite() && tolerance_ms >= 0.0) {
        return Err(usage(format!("--tolerance-ms must be >= 0, got {tolerance_ms}")));
    }
    Ok(ms_to_frames(tolerance_ms, frame_shift_ms)?)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    output::require_input(path)?;
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn load_features(args: &SegmentArgs) -> Result<(String, FeatureSequence)> {
    match (&args.attn, &args.features) {
        (Some(path), _) => {
            let head = args.head.expect("clap requires --head with --attn");
            // Segmentation never needs normalized rows, so pruned tensors are fine.
            let tensor = read_attention(open(path)?, ValidationMode::Lax)
                .with_context(|| format!("reading {}", path.display()))?;
            tensor.check_head(head)?;
            let features = attention_rows_as_features(&tensor, head)?;
            Ok((tensor.utterance_id().to_string(), features))
        }
        (None, Some(path)) => Ok(read_features(open(path)?).with_context(|| format!("reading {}", path.display()))?),
        (None, None) => unreachable!("clap requires one input"),
    }
}

#[derive(Serialize)]
struct FrameValue {
    frame: usize,
    novelty: f64,
}

#[derive(Serialize)]
struct EvalJson<'a> {
    schema_version: u32,
    utterance_id: &'a str,
    frame_shift_ms: f64,
    tolerance_ms: f64,
    tolerance_frames: usize,
    #[serde(flatten)]
    result: SegEvalResult,
    r_value_percent: f64,
}

pub fn segment(args: &SegmentArgs) -> Result<()> {
    let tolerance = tolerance_frames(args.tolerance_ms, args.frame_shift_ms)?;
    let params = SegParams {
        kernel_width: args.kernel_width,
        peak_threshold: args.threshold,
        min_gap: args.min_gap,
    };
    let (id, features) = load_features(args)?;
    let (boundaries, novelty) = segment_features(&features, &params)?;
    let dir = output::out_dir(&args.out)?;

    let tsv = |name: &str| {
        csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_path(dir.join(name))
            .with_context(|| format!("creating {name}"))
    };
    let mut wtr = tsv("boundaries.tsv")?;
    for &frame in boundaries.frames() {
        wtr.serialize(FrameValue {
            frame,
            novelty: novelty[frame],
        })?;
    }
    wtr.flush()?;
    let mut wtr = tsv("novelty.tsv")?;
    for (frame, &value) in novelty.iter().enumerate() {
        wtr.serialize(FrameValue { frame, novelty: value })?;
    }
    wtr.flush()?;
    eprintln!("{id}: {} boundaries over {} frames", boundaries.len(), features.len());

    if let Some(gold_path) = &args.gold {
        let phones = output::read_phones(args.phones.as_deref().expect("clap requires --phones with --gold"))?;
        let track = read_alignment(open(gold_path)?, &id, &phones, features.len())
            .with_context(|| format!("reading {}", gold_path.display()))?;
        let gold = BoundarySet::new(track.boundaries(), track.len())?;
        let result = evaluate_boundaries(&boundaries, &gold, tolerance);
        output::write_json(
            &dir.join("eval.json"),
            &EvalJson {
                schema_version: SCHEMA_VERSION,
                utterance_id: &id,
                frame_shift_ms: args.frame_shift_ms,
                tolerance_ms: args.tolerance_ms,
                tolerance_frames: tolerance,
                result,
                r_value_percent: result.r_value_percent(),
            },
        )?;
        eprintln!(
            "{id}: precision {:.4} recall {:.4} R {:.2}",
            result.precision,
            result.recall,
            result.r_value_percent()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct GridScore {
    kernel_width: usize,
    threshold: f64,
    min_gap: usize,
    mean_r_value: f64,
}

#[derive(Serialize)]
struct TunedJson {
    schema_version: u32,
    layer: usize,
    head: usize,
    utterances: usize,
    tolerance_frames: usize,
    kernel_width: usize,
    threshold: f64,
    min_gap: usize,
    mean_r_value: f64,
    mean_r_value_percent: f64,
    grid: Vec<GridScore>,
}

pub fn tune(args: &TuneArgs) -> Result<()> {
    let tolerance = tolerance_frames(args.tolerance_ms, args.frame_shift_ms)?;
    let grid: TuneGrid = serde_json::from_reader(open(&args.grid)?)
        .with_context(|| format!("parsing grid {}", args.grid.display()))?;
    let phones = output::read_phones(&args.phones)?;
    let (_, corpus) = output::load_corpus(&args.corpus, Some(&phones))?;
    let best = tune_segmentation_params(&corpus, args.head, &grid, tolerance)?;
    let dir = output::out_dir(&args.out)?;
    output::write_json(
        &dir.join("tuned.json"),
        &TunedJson {
            schema_version: SCHEMA_VERSION,
            layer: args.head.layer,
            head: args.head.head,
            utterances: corpus.len(),
            tolerance_frames: tolerance,
            kernel_width: best.params.kernel_width,
            threshold: best.params.peak_threshold,
            min_gap: best.params.min_gap,
            mean_r_value: best.mean_r_value,
            mean_r_value_percent: best.mean_r_value * 100.0,
            grid: best
                .scores
                .iter()
                .map(|(p, r)| GridScore {
                    kernel_width: p.kernel_width,
                    threshold: p.peak_threshold,
                    min_gap: p.min_gap,
                    mean_r_value: *r,
                })
                .collect(),
        },
    )?;
    eprintln!(
        "best of {} grid points: kernel_width {} threshold {} min_gap {} (R {:.2})",
        best.scores.len(),
        best.params.kernel_width,
        best.params.peak_threshold,
        best.params.min_gap,
        best.mean_r_value * 100.0
    );
    Ok(())
}
