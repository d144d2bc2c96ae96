use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Ordered phone inventory; a phone's id is its position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneSet {
    phones: Vec<String>,
    index: HashMap<String, usize>,
}

impl PhoneSet {
    pub fn new<I, S>(phones: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let phones: Vec<String> = phones.into_iter().map(Into::into).collect();
        if phones.is_empty() {
            return Err(Error::Parse("phone set is empty".into()));
        }
        let mut index = HashMap::with_capacity(phones.len());
        for (i, p) in phones.iter().enumerate() {
            if p.is_empty() || p.contains(char::is_whitespace) {
                return Err(Error::Parse(format!("invalid phone name {p:?}")));
            }
            if index.insert(p.clone(), i).is_some() {
                return Err(Error::Parse(format!("duplicate phone {p:?}")));
            }
        }
        Ok(Self { phones, index })
    }

    /// One phone per line; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn to_text(&self) -> String {
        let mut s = self.phones.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.phones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phones.is_empty()
    }

    pub fn id(&self, phone: &str) -> Option<usize> {
        self.index.get(phone).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.phones.get(id).map(String::as_str)
    }

    pub fn phones(&self) -> &[String] {
        &self.phones
    }
}

/// Frame-level phone ids for one utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentTrack {
    utterance_id: String,
    labels: Vec<usize>,
}

impl AlignmentTrack {
    pub fn new(utterance_id: impl Into<String>, labels: Vec<usize>, phone_set: &PhoneSet) -> Result<Self> {
        if let Some((frame, &id)) = labels.iter().enumerate().find(|(_, &id)| id >= phone_set.len()) {
            return Err(Error::Alignment {
                frame,
                message: format!("phone id {id} not in phone set of size {}", phone_set.len()),
            });
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            labels,
        })
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Maximal runs as half-open `(start, end, phone_id)` intervals.
    pub fn to_intervals(&self) -> Vec<(usize, usize, usize)> {
        let mut out: Vec<(usize, usize, usize)> = Vec::new();
        for (t, &p) in self.labels.iter().enumerate() {
            match out.last_mut() {
                Some(last) if last.2 == p => last.1 = t + 1,
                _ => out.push((t, t + 1, p)),
            }
        }
        out
    }

    /// Frames `t` in `(0, T)` where the label differs from frame `t - 1`.
    pub fn boundaries(&self) -> Vec<usize> {
        (1..self.labels.len())
            .filter(|&t| self.labels[t] != self.labels[t - 1])
            .collect()
    }
}

/// Parses an interval TSV (`start<TAB>end<TAB>phone`, half-open, sorted) and
/// expands it to one label per frame. The intervals must tile `[0, expected_len)`.
pub fn read_alignment<R: BufRead>(
    source: R,
    utterance_id: &str,
    phone_set: &PhoneSet,
    expected_len: usize,
) -> Result<AlignmentTrack> {
    let mut labels = Vec::with_capacity(expected_len);
    for (lineno, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let cursor = labels.len();
        if fields.len() != 3 {
            return Err(Error::Alignment {
                frame: cursor,
                message: format!("line {}: expected 3 tab-separated fields", lineno + 1),
            });
        }
        let parse = |s: &str| {
            s.trim().parse::<usize>().map_err(|e| Error::Alignment {
                frame: cursor,
                message: format!("line {}: bad frame index {s:?}: {e}", lineno + 1),
            })
        };
        let (start, end) = (parse(fields[0])?, parse(fields[1])?);
        let phone = fields[2].trim();
        if start > cursor {
            return Err(Error::Alignment {
                frame: cursor,
                message: format!("gap: frames {cursor}..{start} are unlabeled"),
            });
        }
        if start < cursor {
            return Err(Error::Alignment {
                frame: start,
                message: format!("overlap: interval starting at {start} overlaps previous interval ending at {cursor}"),
            });
        }
        if end <= start {
            return Err(Error::Alignment {
                frame: start,
                message: format!("empty interval [{start}, {end})"),
            });
        }
        if end > expected_len {
            return Err(Error::Alignment {
                frame: expected_len,
                message: format!("length mismatch: interval ends at {end}, expected {expected_len} frames"),
            });
        }
        let id = phone_set.id(phone).ok_or_else(|| Error::Alignment {
            frame: start,
            message: format!("unknown phone {phone:?}"),
        })?;
        labels.resize(end, id);
    }
    if labels.len() != expected_len {
        return Err(Error::Alignment {
            frame: labels.len(),
            message: format!(
                "length mismatch: intervals cover {} frames, expected {expected_len}",
                labels.len()
            ),
        });
    }
    Ok(AlignmentTrack {
        utterance_id: utterance_id.to_owned(),
        labels,
    })
}

/// Writes the track as maximal-run intervals.
pub fn write_alignment<W: Write>(track: &AlignmentTrack, phone_set: &PhoneSet, mut sink: W) -> Result<()> {
    for (start, end, id) in track.to_intervals() {
        let name = phone_set
            .name(id)
            .ok_or_else(|| Error::Index(format!("phone id {id} not in phone set")))?;
        writeln!(sink, "{start}\t{end}\t{name}")?;
    }
    sink.flush()?;
    Ok(())
}
