//! Contextual occurrence vectors and their JSON-lines file format.
//!
//! The first line is a header, `{"format": "driftscope-occurrences",
//! "version": 1, "dim": N, "periods": ["earlier", "later"]}` (`periods` is
//! optional). Every following line is one occurrence:
//! `{"word", "embedder": "PREV"|"POST", "period", "sentence_id", "vector"}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

pub const OCCURRENCE_FORMAT: &str = "driftscope-occurrences";
pub const OCCURRENCE_VERSION: u32 = 1;

/// Which period-specific contextualizer produced an occurrence vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Embedder {
    /// Trained on the earlier slice.
    #[serde(rename = "PREV")]
    Prev,
    /// Trained on the later slice.
    #[serde(rename = "POST")]
    Post,
}

impl fmt::Display for Embedder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Embedder::Prev => "PREV",
            Embedder::Post => "POST",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occurrence {
    pub sentence_id: String,
    pub vector: Vec<f64>,
}

/// All occurrence vectors of one word for one (embedder, period) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccurrenceSet {
    pub word: String,
    pub embedder: Embedder,
    pub period: String,
    pub items: Vec<Occurrence>,
}

impl OccurrenceSet {
    pub fn vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.items.iter().map(|o| o.vector.as_slice())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Mean of the occurrence vectors.
    pub fn centroid(&self) -> Option<Vec<f64>> {
        let first = self.items.first()?;
        let mut sum = vec![0.0; first.vector.len()];
        for v in self.vectors() {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
        }
        let n = self.items.len() as f64;
        Some(sum.into_iter().map(|s| s / n).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    periods: Option<[String; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Row {
    word: String,
    embedder: Embedder,
    period: String,
    sentence_id: String,
    vector: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum OccurrenceFileError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unsupported occurrence format version {0}")]
    Version(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type CellKey = (String, Embedder, String);

/// Occurrence sets keyed by (word, embedder, period), all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct OccurrenceStore {
    dim: usize,
    periods: Option<[String; 2]>,
    cells: BTreeMap<CellKey, OccurrenceSet>,
}

impl OccurrenceStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            periods: None,
            cells: BTreeMap::new(),
        }
    }

    pub fn with_periods(mut self, earlier: impl Into<String>, later: impl Into<String>) -> Self {
        self.periods = Some([earlier.into(), later.into()]);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Adds one occurrence. Returns `false` (and stores nothing) on a dimension mismatch.
    pub fn insert(
        &mut self,
        word: &str,
        embedder: Embedder,
        period: &str,
        occurrence: Occurrence,
    ) -> bool {
        if occurrence.vector.len() != self.dim {
            return false;
        }
        self.cells
            .entry((word.to_string(), embedder, period.to_string()))
            .or_insert_with(|| OccurrenceSet {
                word: word.to_string(),
                embedder,
                period: period.to_string(),
                items: Vec::new(),
            })
            .items
            .push(occurrence);
        true
    }

    pub fn get(&self, word: &str, embedder: Embedder, period: &str) -> Option<&OccurrenceSet> {
        self.cells
            .get(&(word.to_string(), embedder, period.to_string()))
    }

    pub fn sets(&self) -> impl Iterator<Item = &OccurrenceSet> {
        self.cells.values()
    }

    pub fn words(&self) -> BTreeSet<&str> {
        self.cells.keys().map(|(w, _, _)| w.as_str()).collect()
    }

    pub fn embedders(&self) -> BTreeSet<Embedder> {
        self.cells.keys().map(|(_, e, _)| *e).collect()
    }

    /// The two period labels in chronological order: the declared ones if
    /// the header named them, otherwise the sorted distinct labels when
    /// there are exactly two.
    pub fn periods(&self) -> Option<[String; 2]> {
        if let Some(p) = &self.periods {
            return Some(p.clone());
        }
        let labels: BTreeSet<&str> = self.cells.keys().map(|(_, _, p)| p.as_str()).collect();
        let mut it = labels.into_iter();
        match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => Some([a.to_string(), b.to_string()]),
            _ => None,
        }
    }

    pub fn read(reader: impl BufRead) -> Result<Self, OccurrenceFileError> {
        let mut lines = reader.lines().enumerate();
        let header: Header = loop {
            match lines.next() {
                None => {
                    return Err(OccurrenceFileError::Malformed {
                        line: 1,
                        message: "missing header".into(),
                    })
                }
                Some((_, line)) if line.as_ref().is_ok_and(|l| l.trim().is_empty()) => continue,
                Some((i, line)) => {
                    break serde_json::from_str(&line?).map_err(|e| {
                        OccurrenceFileError::Malformed {
                            line: i + 1,
                            message: format!("bad header: {e}"),
                        }
                    })?
                }
            }
        };
        if header.format != OCCURRENCE_FORMAT {
            return Err(OccurrenceFileError::Malformed {
                line: 1,
                message: format!("unexpected format `{}`", header.format),
            });
        }
        if header.version != OCCURRENCE_VERSION {
            return Err(OccurrenceFileError::Version(header.version));
        }
        let mut store = OccurrenceStore {
            dim: header.dim,
            periods: header.periods,
            cells: BTreeMap::new(),
        };
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |message: String| OccurrenceFileError::Malformed {
                line: i + 1,
                message,
            };
            let row: Row = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
            if !row.vector.iter().all(|v| v.is_finite()) {
                return Err(malformed("non-finite vector entry".into()));
            }
            let len = row.vector.len();
            let occurrence = Occurrence {
                sentence_id: row.sentence_id,
                vector: row.vector,
            };
            if !store.insert(&row.word, row.embedder, &row.period, occurrence) {
                return Err(malformed(format!(
                    "vector has {len} entries, header declares {}",
                    store.dim
                )));
            }
        }
        Ok(store)
    }

    pub fn write(&self, mut writer: impl Write) -> std::io::Result<()> {
        let header = Header {
            format: OCCURRENCE_FORMAT.into(),
            version: OCCURRENCE_VERSION,
            dim: self.dim,
            periods: self.periods.clone(),
        };
        serde_json::to_writer(&mut writer, &header)?;
        writeln!(writer)?;
        for set in self.cells.values() {
            for occ in &set.items {
                let row = Row {
                    word: set.word.clone(),
                    embedder: set.embedder,
                    period: set.period.clone(),
                    sentence_id: occ.sentence_id.clone(),
                    vector: occ.vector.clone(),
                };
                serde_json::to_writer(&mut writer, &row)?;
                writeln!(writer)?;
            }
        }
        Ok(())
    }
}
