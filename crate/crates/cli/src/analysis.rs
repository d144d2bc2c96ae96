use std::collections::BTreeSet;

use anyhow::{bail, Result};
use atlas_core::metrics::{category_from_ranks, HeadMetrics, RankColumn};
use atlas_core::prm::{self, ExtremeConcentration, PhonemeRelationMap, Tendency};
use atlas_core::render::render_diverging;
use atlas_core::tensorio::all_heads;
use atlas_core::{Category, HeadId, Metric, PhoneSet};
use rayon::prelude::*;
use serde::Serialize;

use crate::output::{self, MetricsRow, SCHEMA_VERSION};
use crate::{CategorizeArgs, ConcentrationArgs, MetricsArgs, PrmArgs, RankCompareArgs};

pub fn metrics(args: &MetricsArgs) -> Result<()> {
    let (_, corpus) = output::load_corpus(&args.corpus, None)?;
    let scores = HeadMetrics::compute(&corpus)?;
    let dir = output::out_dir(&args.out)?;
    let mut wtr = output::csv_writer(&dir.join("metrics.csv"))?;
    for row in output::metrics_rows(&scores) {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    eprintln!("wrote {}", dir.join("metrics.csv").display());
    Ok(())
}

/// Rebuilds one ranking from the rank column of a metrics CSV, checking
/// that it is a permutation of `1..=n`.
fn rank_column(rows: &[MetricsRow], metric: Metric) -> Result<RankColumn> {
    let mut by_rank: Vec<(usize, HeadId)> = rows.iter().map(|r| (r.rank(metric), r.head_id())).collect();
    by_rank.sort();
    if by_rank.iter().enumerate().any(|(i, (rank, _))| *rank != i + 1) {
        bail!("rank_{} is not a permutation of 1..={}", metric.short_name(), rows.len());
    }
    Ok(RankColumn::from_order(metric, by_rank.into_iter().map(|(_, h)| h).collect())?)
}

fn check_unique_heads(rows: &[MetricsRow]) -> Result<()> {
    let mut seen = BTreeSet::new();
    if let Some(dup) = rows.iter().map(MetricsRow::head_id).find(|h| !seen.insert(*h)) {
        bail!("head {dup} appears twice");
    }
    Ok(())
}

#[derive(Serialize)]
struct CategoryRow {
    layer: usize,
    head: usize,
    category: Category,
}

pub fn categorize(args: &CategorizeArgs) -> Result<()> {
    let rows = output::read_metrics_csv(&args.metrics)?;
    check_unique_heads(&rows)?;
    for m in [Metric::Globalness, Metric::Verticality, Metric::Diagonality] {
        rank_column(&rows, m)?;
    }
    let dir = output::out_dir(&args.out)?;
    let mut wtr = output::csv_writer(&dir.join("categories.csv"))?;
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.head_id());
    for r in sorted {
        wtr.serialize(CategoryRow {
            layer: r.layer,
            head: r.head,
            category: category_from_ranks(r.rank_g, r.rank_v, r.rank_d),
        })?;
    }
    wtr.flush()?;
    eprintln!("categorized {} heads", rows.len());
    Ok(())
}

#[derive(Serialize)]
struct CompareRow {
    layer: usize,
    head: usize,
    rank_a: usize,
    rank_b: usize,
    difference: i64,
}

pub fn rank_compare(args: &RankCompareArgs) -> Result<()> {
    let rows = output::read_metrics_csv(&args.metrics)?;
    check_unique_heads(&rows)?;
    let a = rank_column(&rows, args.a)?;
    let b = rank_column(&rows, args.b)?;
    let dir = output::out_dir(&args.out)?;
    let mut wtr = output::csv_writer(&dir.join("rank_compare.csv"))?;
    for c in atlas_core::metrics::rank_compare(&a, &b)? {
        wtr.serialize(CompareRow {
            layer: c.head.layer,
            head: c.head.head,
            rank_a: c.rank_a,
            rank_b: c.rank_b,
            difference: c.difference,
        })?;
    }
    wtr.flush()?;
    eprintln!("compared {} against {} over {} heads", args.a, args.b, rows.len());
    Ok(())
}

#[derive(Serialize)]
#[serde(untagged)]
enum Cell<'a> {
    Text(&'a str),
    Value(f64),
}

#[derive(Serialize)]
struct PhoneConcentration<'a> {
    phone: &'a str,
    value: Option<f64>,
    defined_cells: usize,
}

#[derive(Serialize)]
struct ExtremeJson<'a> {
    phone: &'a str,
    value: f64,
    tendency: Tendency,
}

#[derive(Serialize)]
struct ConcentrationJson<'a> {
    schema_version: u32,
    layer: usize,
    head: usize,
    concentration: Vec<PhoneConcentration<'a>>,
    extreme: Option<ExtremeJson<'a>>,
}

fn phone_name(phones: &PhoneSet, id: usize) -> &str {
    phones.name(id).expect("phone id comes from the phone set")
}

fn extreme_of(map: &PhonemeRelationMap) -> Option<ExtremeConcentration> {
    prm::extreme_concentration(&prm::concentration(map)).ok()
}

pub fn prm(args: &PrmArgs) -> Result<()> {
    let phones = output::read_phones(&args.phones)?;
    let (_, corpus) = output::load_corpus(&args.corpus, Some(&phones))?;
    let map = prm::phoneme_relation_map(args.head, &corpus, &phones)?;
    let conc = prm::concentration(&map);
    let dir = output::out_dir(&args.out)?;

    let mut wtr = output::csv_writer(&dir.join("prm.csv"))?;
    wtr.write_record(std::iter::once("phone").chain(phones.phones().iter().map(String::as_str)))?;
    for m in 0..phones.len() {
        let mut row = vec![Cell::Text(phone_name(&phones, m))];
        row.extend((0..phones.len()).map(|n| map.get(m, n).map_or(Cell::Text("NA"), Cell::Value)));
        wtr.serialize(row)?;
    }
    wtr.flush()?;

    let doc = ConcentrationJson {
        schema_version: SCHEMA_VERSION,
        layer: args.head.layer,
        head: args.head.head,
        concentration: conc
            .values
            .iter()
            .zip(&conc.defined_counts)
            .enumerate()
            .map(|(n, (&value, &defined_cells))| PhoneConcentration {
                phone: phone_name(&phones, n),
                value,
                defined_cells,
            })
            .collect(),
        extreme: extreme_of(&map).map(|e| ExtremeJson {
            phone: phone_name(&phones, e.phone),
            value: e.value,
            tendency: e.tendency,
        }),
    };
    output::write_json(&dir.join("concentration.json"), &doc)?;

    if args.pgm {
        let image = render_diverging(map.values.view(), Some(map.defined.view()))?;
        output::write_bytes(&dir.join("prm.pgm"), &image)?;
    }
    eprintln!("head {}: relation map over {} phones", args.head, phones.len());
    Ok(())
}

#[derive(Serialize)]
struct ConcentrationRow<'a> {
    layer: usize,
    head: usize,
    #[serde(rename = "V")]
    v: f64,
    phone: &'a str,
    value: f64,
    tendency: Tendency,
}

pub fn concentration(args: &ConcentrationArgs) -> Result<()> {
    let phones = output::read_phones(&args.phones)?;
    let (_, corpus) = output::load_corpus(&args.corpus, Some(&phones))?;
    let (l, h) = corpus.shape().expect("corpus is non-empty");
    let scores = HeadMetrics::compute(&corpus)?;
    let heads: Vec<HeadId> = all_heads(l, h).collect();
    let extremes = heads
        .par_iter()
        .map(|&head| {
            let map = prm::phoneme_relation_map(head, &corpus, &phones)?;
            Ok(prm::extreme_concentration(&prm::concentration(&map))?)
        })
        .collect::<Result<Vec<_>>>()?;

    let dir = output::out_dir(&args.out)?;
    let mut wtr = output::csv_writer(&dir.join("concentration.csv"))?;
    for (head, e) in heads.iter().zip(extremes) {
        wtr.serialize(ConcentrationRow {
            layer: head.layer,
            head: head.head,
            v: scores.get(*head).expect("scored").verticality,
            phone: phone_name(&phones, e.phone),
            value: e.value,
            tendency: e.tendency,
        })?;
    }
    wtr.flush()?;
    eprintln!("wrote concentration of {} heads", heads.len());
    Ok(())
}
