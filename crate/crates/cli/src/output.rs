use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use atlas_core::metrics::{Category, HeadMetrics, RankTable};
use atlas_core::tensorio::{write_alignment, write_attention_lax, ManifestEntry};
use atlas_core::{AlignmentTrack, AttentionTensor, Corpus, CorpusManifest, HeadId, Metric, PhoneSet, ValidationMode};
use serde::{Deserialize, Serialize};

use crate::{usage, CorpusArgs};

/// Version stamped into every JSON document the tool writes.
pub const SCHEMA_VERSION: u32 = 1;

pub fn require_input(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(usage(format!("input {} does not exist", path.display())));
    }
    Ok(())
}

pub fn out_dir(path: &Path) -> Result<&Path> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(path)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_bytes(path, &text)
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

pub fn read_phones(path: &Path) -> Result<PhoneSet> {
    require_input(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(PhoneSet::parse(&text)?)
}

pub fn read_manifest(path: &Path) -> Result<CorpusManifest> {
    require_input(path)?;
    CorpusManifest::read(path).with_context(|| format!("reading manifest {}", path.display()))
}

pub fn load_corpus(args: &CorpusArgs, phones: Option<&PhoneSet>) -> Result<(CorpusManifest, Corpus)> {
    let manifest = read_manifest(&args.manifest)?;
    let mode = if args.lax { ValidationMode::Lax } else { ValidationMode::Strict };
    let corpus = Corpus::load(&manifest, phones, mode)?;
    match corpus.shape() {
        Some((l, h)) => eprintln!("loaded {} utterances, {l} layers x {h} heads", corpus.len()),
        None => bail!("manifest {} lists no utterances", args.manifest.display()),
    }
    Ok((manifest, corpus))
}

/// Utterance ids become file names, so they may not contain path syntax.
pub fn file_stem(id: &str) -> Result<&str> {
    if id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\']) {
        bail!("utterance id {id:?} cannot be used as a file name");
    }
    Ok(id)
}

/// Where the alignment of a written utterance comes from.
pub enum AlignSource<'a> {
    None,
    /// Copy an existing TSV byte for byte.
    Copy(PathBuf),
    Track(&'a AlignmentTrack, &'a PhoneSet),
}

/// Writes `<id>.atns` (+ `<id>.tsv`) files and `manifest.jsonl` into `dir`.
/// Tensors are written without the row-sum check.
pub fn write_corpus<'a>(
    dir: &Path,
    utterances: impl IntoIterator<Item = (&'a AttentionTensor, AlignSource<'a>)>,
) -> Result<usize> {
    let mut entries = Vec::new();
    for (tensor, source) in utterances {
        let stem = file_stem(tensor.utterance_id())?.to_string();
        let attn = PathBuf::from(format!("{stem}.atns"));
        write_attention_lax(tensor, BufWriter::new(fs::File::create(dir.join(&attn))?))?;
        let name = PathBuf::from(format!("{stem}.tsv"));
        let align = match source {
            AlignSource::None => None,
            AlignSource::Copy(from) => {
                fs::copy(&from, dir.join(&name)).with_context(|| format!("copying {}", from.display()))?;
                Some(name)
            }
            AlignSource::Track(track, phones) => {
                write_alignment(track, phones, BufWriter::new(fs::File::create(dir.join(&name))?))?;
                Some(name)
            }
        };
        entries.push(ManifestEntry { id: stem, attn, align });
    }
    let n = entries.len();
    let manifest = CorpusManifest::new(entries, dir)?;
    manifest.write(BufWriter::new(fs::File::create(dir.join("manifest.jsonl"))?))?;
    Ok(n)
}

/// Alignment sources that carry the manifest's TSVs over to a derived corpus.
pub fn copied_alignments<'a>(manifest: &CorpusManifest) -> impl Iterator<Item = AlignSource<'a>> + '_ {
    manifest.entries.iter().map(|e| match &e.align {
        Some(p) => AlignSource::Copy(manifest.resolve(p)),
        None => AlignSource::None,
    })
}

/// One row of metrics.csv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub layer: usize,
    pub head: usize,
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub max_weight: f64,
    #[serde(rename = "rank_G")]
    pub rank_g: usize,
    #[serde(rename = "rank_V")]
    pub rank_v: usize,
    #[serde(rename = "rank_D")]
    pub rank_d: usize,
    pub rank_weight: usize,
    pub category: Category,
}

impl MetricsRow {
    pub fn head_id(&self) -> HeadId {
        HeadId::new(self.layer, self.head)
    }

    pub fn rank(&self, metric: Metric) -> usize {
        match metric {
            Metric::Globalness => self.rank_g,
            Metric::Verticality => self.rank_v,
            Metric::Diagonality => self.rank_d,
            Metric::MaxWeight => self.rank_weight,
        }
    }
}

pub fn metrics_rows(metrics: &HeadMetrics) -> Vec<MetricsRow> {
    let ranks = RankTable::from_metrics(metrics);
    let cats = atlas_core::metrics::categorize(&ranks);
    metrics
        .scores
        .iter()
        .map(|s| {
            let rank = |m| ranks.column(m).rank(s.head).expect("every head is ranked");
            MetricsRow {
                layer: s.head.layer,
                head: s.head.head,
                g: s.globalness,
                v: s.verticality,
                d: s.diagonality,
                max_weight: s.max_weight,
                rank_g: rank(Metric::Globalness),
                rank_v: rank(Metric::Verticality),
                rank_d: rank(Metric::Diagonality),
                rank_weight: rank(Metric::MaxWeight),
                category: cats.get(s.head).expect("every head is categorized"),
            }
        })
        .collect()
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    require_input(path)?;
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = reader
        .deserialize()
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    if rows.is_empty() {
        bail!("{} has no heads", path.display());
    }
    Ok(rows)
}
