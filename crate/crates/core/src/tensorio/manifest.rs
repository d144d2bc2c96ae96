use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{read_alignment, read_attention, AlignmentTrack, AttentionTensor, PhoneSet, ValidationMode};
use crate::error::{Error, Result};

/// One JSON-lines record: `{"id": ..., "attn": ..., "align": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub attn: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub align: Option<PathBuf>,
}

/// Ordered list of utterances. Relative paths resolve against `base_dir`
/// (the manifest file's directory when loaded from disk).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl CorpusManifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Parse(format!("duplicate utterance id {:?} in manifest", e.id)));
            }
        }
        Ok(Self {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(line)
                .map_err(|e| Error::Parse(format!("manifest line {}: {e}", i + 1)))?;
            entries.push(entry);
        }
        Self::new(entries, base_dir)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn write<W: Write>(&self, mut sink: W) -> Result<()> {
        for e in &self.entries {
            let line = serde_json::to_string(e).map_err(|e| Error::Parse(e.to_string()))?;
            writeln!(sink, "{line}")?;
        }
        sink.flush()?;
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub tensor: AttentionTensor,
    pub alignment: Option<AlignmentTrack>,
}

/// A loaded corpus: utterances in manifest order sharing one (L, H) shape.
/// Sequence lengths may differ between utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        let mut ids = HashSet::new();
        if let Some(first) = utterances.first() {
            let shape = (first.tensor.num_layers(), first.tensor.num_heads());
            for u in &utterances {
                let id = u.tensor.utterance_id();
                if !ids.insert(id.to_owned()) {
                    return Err(Error::domain(format!("duplicate utterance id {id:?}")));
                }
                let s = (u.tensor.num_layers(), u.tensor.num_heads());
                if s != shape {
                    return Err(Error::domain(format!(
                        "utterance {id:?} has {}x{} heads, corpus has {}x{}",
                        s.0, s.1, shape.0, shape.1
                    )));
                }
                if let Some(a) = &u.alignment {
                    if a.len() != u.tensor.seq_len() {
                        return Err(Error::Alignment {
                            frame: a.len().min(u.tensor.seq_len()),
                            message: format!(
                                "utterance {id:?}: alignment has {} frames, tensor has {}",
                                a.len(),
                                u.tensor.seq_len()
                            ),
                        });
                    }
                }
            }
        }
        Ok(Self { utterances })
    }

    pub fn from_tensors(tensors: impl IntoIterator<Item = AttentionTensor>) -> Result<Self> {
        Self::new(
            tensors
                .into_iter()
                .map(|tensor| Utterance {
                    tensor,
                    alignment: None,
                })
                .collect(),
        )
    }

    /// Loads every manifest entry. Alignments are read only when a phone set
    /// is supplied. Files are read in parallel; the result keeps manifest
    /// order and reports the first failing entry.
    pub fn load(manifest: &CorpusManifest, phone_set: Option<&PhoneSet>, mode: ValidationMode) -> Result<Self> {
        let loaded: Vec<Result<Utterance>> = manifest
            .entries
            .par_iter()
            .map(|entry| load_entry(manifest, entry, phone_set, mode))
            .collect();
        Self::new(loaded.into_iter().collect::<Result<Vec<_>>>()?)
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn tensors(&self) -> impl Iterator<Item = &AttentionTensor> {
        self.utterances.iter().map(|u| &u.tensor)
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// `(L, H)` of the corpus, `None` when empty.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.utterances
            .first()
            .map(|u| (u.tensor.num_layers(), u.tensor.num_heads()))
    }

    pub fn max_seq_len(&self) -> usize {
        self.tensors().map(AttentionTensor::seq_len).max().unwrap_or(0)
    }

    pub(crate) fn require_non_empty(&self) -> Result<(usize, usize)> {
        self.shape().ok_or_else(|| Error::domain("corpus is empty"))
    }

    pub(crate) fn check_head(&self, head: super::HeadId) -> Result<()> {
        let (l, h) = self.require_non_empty()?;
        head.check_bounds(l, h)
    }
}

fn load_entry(
    manifest: &CorpusManifest,
    entry: &ManifestEntry,
    phone_set: Option<&PhoneSet>,
    mode: ValidationMode,
) -> Result<Utterance> {
    let attn_path = manifest.resolve(&entry.attn);
    let file = File::open(&attn_path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", attn_path.display())))
    })?;
    let tensor = read_attention(BufReader::new(file), mode)?;
    if tensor.utterance_id() != entry.id {
        return Err(Error::domain(format!(
            "manifest id {:?} does not match tensor id {:?} in {}",
            entry.id,
            tensor.utterance_id(),
            attn_path.display()
        )));
    }
    let alignment = match (&entry.align, phone_set) {
        (Some(path), Some(phones)) => {
            let path = manifest.resolve(path);
            let file = File::open(&path).map_err(|e| {
                Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
            })?;
            Some(read_alignment(BufReader::new(file), &entry.id, phones, tensor.seq_len())?)
        }
        _ => None,
    };
    Ok(Utterance { tensor, alignment })
}
