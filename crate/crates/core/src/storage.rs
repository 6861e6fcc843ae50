//! File-system run registry.
//!
//! ```text
//! <root>/runs/<run_id>/
//!     run.json                        RunRecord
//!     corpus.jsonl                    header line, then one sentence per line
//!     models/sgns-op/{earlier,later}.w2v (+ .meta.json)
//!     models/sgns-op/aligned/{earlier,later}.w2v, alignment.json
//!     models/sgns-wi/model.w2v, model.meta.json
//!     occurrences.jsonl               contextual occurrence vectors
//!     rankings/<model>/<metric>.{json,csv}
//!     results/<model>/<metric>.{json,csv}
//!     report.json
//!     projections/<model>/<key>.json
//! ```
//!
//! Vectors use the word2vec text format; everything else is JSON wrapped in
//! `{"format_version", "kind", "data"}`. Every file is written to a temporary
//! sibling and renamed into place, so readers never see partial files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::align::{AlignOptions, AlignedPair};
use crate::corpus::{MissingTarget, Period, Sentence, TagPair, TimeSlicedCorpus, Vocabulary};
use crate::detector::{
    ChangeRanking, EvaluationReport, MetricId, ModelArtifacts, ModelKind, Unscoreable,
};
use crate::metrics::{Embedder, OccurrenceFileError, OccurrenceStore};
use crate::projection::ProjectionResult;
use crate::sgns::{EmbeddingModel, SgnsConfig, WiModel};

pub const FORMAT_VERSION: u32 = 1;
pub const HOME_ENV: &str = "DRIFTSCOPE_HOME";
const CORPUS_FORMAT: &str = "driftscope-corpus";

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("corrupt artifact {path}: {message}")]
    CorruptArtifact { path: PathBuf, message: String },
    #[error("{path} has format version {found}, expected {expected}")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("run `{0}` already exists")]
    RunExists(String),
    #[error("invalid run id `{0}` (use letters, digits, `.`, `_` and `-`)")]
    InvalidRunId(String),
    #[error("invalid model id `{0}` (expected <run_id>:<model>)")]
    InvalidModelId(String),
    #[error("`{0}` cannot be stored in word2vec text format")]
    UnstorableWord(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, StorageError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn corrupt(path: &Path, message: impl fmt::Display) -> StorageError {
    StorageError::CorruptArtifact {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            StorageError::NotFound(path.display().to_string())
        } else {
            StorageError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

/// Writes via a temporary file in the same directory and renames it over `path`.
pub fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        write(&mut buf).map_err(io_err(path))?;
        buf.flush().map_err(io_err(path))?;
    }
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StorageError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    format_version: u32,
    kind: &'a str,
    data: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    format_version: u32,
    kind: String,
    data: serde_json::Value,
}

/// Writes `data` inside a versioned JSON envelope.
pub fn write_json<T: Serialize>(path: &Path, kind: &str, data: &T) -> Result<()> {
    let envelope = EnvelopeOut {
        format_version: FORMAT_VERSION,
        kind,
        data,
    };
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, &envelope)?;
        writeln!(w)
    })
}

/// Reads an envelope written by [`write_json`], checking version and kind.
pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = read_file(path)?;
    let envelope: EnvelopeIn = serde_json::from_str(&text).map_err(|e| corrupt(path, e))?;
    if envelope.format_version != FORMAT_VERSION {
        return Err(StorageError::VersionMismatch {
            path: path.to_path_buf(),
            found: envelope.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if envelope.kind != kind {
        return Err(corrupt(
            path,
            format!("expected a {kind}, found a {}", envelope.kind),
        ));
    }
    serde_json::from_value(envelope.data).map_err(|e| corrupt(path, e))
}

/// Writes `words[i]` with row `i` of `vectors` as word2vec text.
pub fn write_word2vec(path: &Path, words: &[String], vectors: &Array2<f64>) -> Result<()> {
    if let Some(bad) = words
        .iter()
        .find(|w| w.is_empty() || w.contains(char::is_whitespace))
    {
        return Err(StorageError::UnstorableWord(bad.clone()));
    }
    assert_eq!(words.len(), vectors.nrows(), "one row per word");
    write_atomic(path, |w| {
        writeln!(w, "{} {}", vectors.nrows(), vectors.ncols())?;
        for (word, row) in words.iter().zip(vectors.rows()) {
            write!(w, "{word}")?;
            for v in row {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}

/// Reads a word2vec text file into its word list and `|V| × d` matrix.
pub fn read_word2vec(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let file = fs::File::open(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            StorageError::NotFound(path.display().to_string())
        } else {
            StorageError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| corrupt(path, "empty file"))?
        .map_err(io_err(path))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| corrupt(path, "bad header"))?;
    let [rows, cols] = dims[..] else {
        return Err(corrupt(path, "header must be `<count> <dim>`"));
    };
    let mut words = Vec::with_capacity(rows);
    let mut values = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| corrupt(path, format!("expected {rows} vectors, found {i}")))?
            .map_err(io_err(path))?;
        let mut fields = line.split(' ');
        let word = fields.next().filter(|w| !w.is_empty());
        let word = word.ok_or_else(|| corrupt(path, format!("line {}: missing word", i + 2)))?;
        let before = values.len();
        for field in fields.filter(|f| !f.is_empty()) {
            let v: f64 = field
                .parse()
                .map_err(|_| corrupt(path, format!("line {}: bad number `{field}`", i + 2)))?;
            values.push(v);
        }
        if values.len() - before != cols {
            return Err(corrupt(
                path,
                format!(
                    "line {}: expected {cols} values, found {}",
                    i + 2,
                    values.len() - before
                ),
            ));
        }
        words.push(word.to_string());
    }
    if lines.any(|l| l.map(|l| !l.trim().is_empty()).unwrap_or(true)) {
        return Err(corrupt(path, format!("more than {rows} vectors")));
    }
    let matrix = Array2::from_shape_vec((rows, cols), values).expect("counted above");
    Ok((words, matrix))
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    vocabulary: Vocabulary,
    config: SgnsConfig,
    provenance: String,
    epoch_losses: Vec<f64>,
}

fn meta_path(w2v: &Path) -> PathBuf {
    w2v.with_extension("meta.json")
}

/// Saves a model as `<path>` (word2vec text) plus a `.meta.json` sidecar.
pub fn save_model(path: &Path, model: &EmbeddingModel) -> Result<()> {
    let words: Vec<String> = model.vocabulary.tokens().map(String::from).collect();
    write_word2vec(path, &words, &model.vectors)?;
    let meta = ModelMeta {
        vocabulary: model.vocabulary.clone(),
        config: model.config.clone(),
        provenance: model.provenance.clone(),
        epoch_losses: model.epoch_losses.clone(),
    };
    write_json(&meta_path(path), "model-meta", &meta)
}

pub fn load_model(path: &Path) -> Result<EmbeddingModel> {
    let (words, vectors) = read_word2vec(path)?;
    let meta: ModelMeta = read_json(&meta_path(path), "model-meta")?;
    let listed: Vec<&str> = meta.vocabulary.tokens().collect();
    if listed != words.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(corrupt(
            path,
            "vector rows disagree with the vocabulary sidecar",
        ));
    }
    Ok(EmbeddingModel {
        vocabulary: meta.vocabulary,
        vectors,
        config: meta.config,
        provenance: meta.provenance,
        epoch_losses: meta.epoch_losses,
    })
}

#[derive(Serialize, Deserialize)]
struct WiMeta {
    tags: BTreeMap<String, TagPair>,
    missing: Vec<MissingTarget>,
    separator: char,
}

pub fn save_wi_model(dir: &Path, wi: &WiModel) -> Result<()> {
    save_model(&dir.join("model.w2v"), &wi.model)?;
    let meta = WiMeta {
        tags: wi.tags.clone(),
        missing: wi.missing.clone(),
        separator: wi.separator,
    };
    write_json(&dir.join("injection.json"), "word-injection", &meta)
}

pub fn load_wi_model(dir: &Path) -> Result<WiModel> {
    let model = load_model(&dir.join("model.w2v"))?;
    let meta: WiMeta = read_json(&dir.join("injection.json"), "word-injection")?;
    Ok(WiModel {
        model,
        tags: meta.tags,
        missing: meta.missing,
        separator: meta.separator,
    })
}

#[derive(Serialize, Deserialize)]
struct AlignmentMeta {
    /// The earlier slice is rotated onto the later one.
    direction: String,
    dim: usize,
    /// Ω, row-major.
    omega: Vec<f64>,
    residual: f64,
    options: AlignOptions,
    labels: [String; 2],
}

pub fn save_aligned(dir: &Path, pair: &AlignedPair) -> Result<()> {
    let words = pair.shared_vocab().to_vec();
    write_word2vec(
        &dir.join("earlier.w2v"),
        &words,
        &pair.a_aligned().to_owned(),
    )?;
    write_word2vec(&dir.join("later.w2v"), &words, &pair.b().to_owned())?;
    let meta = AlignmentMeta {
        direction: "earlier-onto-later".into(),
        dim: pair.dim(),
        omega: pair.omega().iter().copied().collect(),
        residual: pair.residual(),
        options: pair.options(),
        labels: pair.labels().clone(),
    };
    write_json(&dir.join("alignment.json"), "alignment", &meta)
}

pub fn load_aligned(dir: &Path) -> Result<AlignedPair> {
    let meta_file = dir.join("alignment.json");
    let meta: AlignmentMeta = read_json(&meta_file, "alignment")?;
    let (words_a, a) = read_word2vec(&dir.join("earlier.w2v"))?;
    let (words_b, b) = read_word2vec(&dir.join("later.w2v"))?;
    if words_a != words_b {
        return Err(corrupt(dir, "aligned files list different words"));
    }
    if a.ncols() != meta.dim || b.ncols() != meta.dim {
        return Err(corrupt(&meta_file, "dimension disagrees with vector files"));
    }
    let omega = Array2::from_shape_vec((meta.dim, meta.dim), meta.omega)
        .map_err(|_| corrupt(&meta_file, "omega is not dim × dim"))?;
    Ok(AlignedPair::from_parts(
        words_a,
        a,
        b,
        omega,
        meta.residual,
        meta.options,
        meta.labels,
    ))
}

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    format: String,
    format_version: u32,
    labels: [String; 2],
    fingerprint: String,
}

/// SHA-256 over labels and sentences, hex-encoded.
pub fn corpus_fingerprint(corpus: &TimeSlicedCorpus) -> String {
    let mut hasher = Sha256::new();
    for label in corpus.labels() {
        hasher.update(label.as_bytes());
        hasher.update([0u8]);
    }
    for s in corpus.sentences() {
        hasher.update(format!("{}\t{}\t{}\t", s.doc_id, s.index, s.period).as_bytes());
        hasher.update(s.tokens.join(" ").as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

pub fn save_corpus(path: &Path, corpus: &TimeSlicedCorpus) -> Result<()> {
    let header = CorpusHeader {
        format: CORPUS_FORMAT.into(),
        format_version: FORMAT_VERSION,
        labels: corpus.labels().clone(),
        fingerprint: corpus_fingerprint(corpus),
    };
    write_atomic(path, |w| {
        serde_json::to_writer(&mut *w, &header)?;
        writeln!(w)?;
        for s in corpus.sentences() {
            serde_json::to_writer(&mut *w, s)?;
            writeln!(w)?;
        }
        Ok(())
    })
}

pub fn load_corpus(path: &Path) -> Result<TimeSlicedCorpus> {
    let text = read_file(path)?;
    let mut lines = text.lines();
    let header: CorpusHeader = serde_json::from_str(lines.next().unwrap_or(""))
        .map_err(|e| corrupt(path, format!("bad header: {e}")))?;
    if header.format != CORPUS_FORMAT {
        return Err(corrupt(
            path,
            format!("unexpected format `{}`", header.format),
        ));
    }
    if header.format_version != FORMAT_VERSION {
        return Err(StorageError::VersionMismatch {
            path: path.to_path_buf(),
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let mut slices: [Vec<Sentence>; 2] = [Vec::new(), Vec::new()];
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let s: Sentence = serde_json::from_str(line)
            .map_err(|e| corrupt(path, format!("line {}: {e}", i + 2)))?;
        slices[s.period.index()].push(s);
    }
    let [earlier, later] = slices;
    let [a, b] = header.labels;
    let corpus =
        TimeSlicedCorpus::from_sentences([a, b], earlier, later).map_err(|e| corrupt(path, e))?;
    if corpus_fingerprint(&corpus) != header.fingerprint {
        return Err(corrupt(path, "fingerprint does not match contents"));
    }
    Ok(corpus)
}

fn occurrence_error(path: &Path, e: OccurrenceFileError) -> StorageError {
    match e {
        OccurrenceFileError::Version(found) => StorageError::VersionMismatch {
            path: path.to_path_buf(),
            found,
            expected: crate::metrics::OCCURRENCE_VERSION,
        },
        OccurrenceFileError::Io(source) => StorageError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => corrupt(path, other),
    }
}

pub fn save_occurrences(path: &Path, store: &OccurrenceStore) -> Result<()> {
    write_atomic(path, |w| store.write(w))
}

pub fn load_occurrences(path: &Path) -> Result<OccurrenceStore> {
    let file = fs::File::open(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            StorageError::NotFound(path.display().to_string())
        } else {
            StorageError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    OccurrenceStore::read(BufReader::new(file)).map_err(|e| occurrence_error(path, e))
}

/// A ranking produced without gold labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingArtifact {
    pub ranking: ChangeRanking,
    pub unscoreable: Vec<Unscoreable>,
    pub nonconverged: Vec<String>,
}

/// One row of the run-level results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: ModelKind,
    pub metric: MetricId,
    pub score: f64,
    pub display_score: f64,
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub changed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub rows: Vec<ReportRow>,
}

/// A model within a run: `<run_id>:<model>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelRef {
    pub run_id: String,
    pub kind: ModelKind,
}

impl ModelRef {
    pub fn key(kind: ModelKind) -> String {
        kind.name().to_ascii_lowercase()
    }
}

impl fmt::Display for ModelRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.run_id, ModelRef::key(self.kind))
    }
}

impl FromStr for ModelRef {
    type Err = StorageError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || StorageError::InvalidModelId(s.to_string());
        let (run, model) = s.rsplit_once(':').ok_or_else(bad)?;
        validate_run_id(run).map_err(|_| bad())?;
        Ok(ModelRef {
            run_id: run.to_string(),
            kind: model.parse().map_err(|_| bad())?,
        })
    }
}

fn validate_run_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(StorageError::InvalidRunId(id.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub created_at: DateTime<Utc>,
    /// [`corpus_fingerprint`] of the run's corpus, once one is stored.
    pub fingerprint: Option<String>,
    /// Model keys present in the run (`sgns-op`, `sgns-wi`, ...).
    pub model_ids: Vec<String>,
    /// Settings the run was produced with.
    pub config: serde_json::Value,
}

/// Owned artifacts of one model, loaded from a run.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Aligned(AlignedPair),
    Injected(WiModel),
    Contextual(OccurrenceStore, Embedder),
}

impl LoadedModel {
    pub fn artifacts(&self) -> ModelArtifacts<'_> {
        match self {
            LoadedModel::Aligned(p) => ModelArtifacts::Aligned(p),
            LoadedModel::Injected(w) => ModelArtifacts::Injected(w),
            LoadedModel::Contextual(store, embedder) => ModelArtifacts::Contextual {
                store,
                embedder: *embedder,
            },
        }
    }
}

/// Runs listed from a registry, with warnings for entries that were skipped.
#[derive(Debug, Clone, Default)]
pub struct RunListing {
    pub runs: Vec<RunRecord>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Registry {
    root: PathBuf,
}

impl Registry {
    /// Opens (creating if needed) a registry rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let runs = root.join("runs");
        fs::create_dir_all(&runs).map_err(io_err(&runs))?;
        Ok(Self { root })
    }

    /// Root from an explicit path, else `$DRIFTSCOPE_HOME`, else `./.driftscope`.
    pub fn resolve_root(explicit: Option<&Path>) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(HOME_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(".driftscope"))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id)
    }

    /// Creates a run. Without an explicit id, one is derived from the
    /// creation time.
    pub fn create_run(&self, run_id: Option<&str>, config: serde_json::Value) -> Result<Run> {
        let created_at = Utc::now();
        let run_id = match run_id {
            Some(id) => {
                validate_run_id(id)?;
                if self.run_dir(id).exists() {
                    return Err(StorageError::RunExists(id.to_string()));
                }
                id.to_string()
            }
            None => {
                let base = created_at.format("run-%Y%m%d-%H%M%S-%3f").to_string();
                let mut id = base.clone();
                let mut n = 2;
                while self.run_dir(&id).exists() {
                    id = format!("{base}-{n}");
                    n += 1;
                }
                id
            }
        };
        let dir = self.run_dir(&run_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let run = Run {
            dir,
            record: RunRecord {
                run_id,
                created_at,
                fingerprint: None,
                model_ids: Vec::new(),
                config,
            },
        };
        run.save_record()?;
        Ok(run)
    }

    pub fn run(&self, run_id: &str) -> Result<Run> {
        validate_run_id(run_id)?;
        let dir = self.run_dir(run_id);
        if !dir.is_dir() {
            return Err(StorageError::NotFound(format!("run `{run_id}`")));
        }
        let record: RunRecord = read_json(&dir.join("run.json"), "run")?;
        if record.run_id != run_id {
            return Err(corrupt(
                &dir.join("run.json"),
                "run id does not match its directory",
            ));
        }
        Ok(Run { dir, record })
    }

    /// All readable runs ordered by creation time; unreadable entries are
    /// skipped and reported in [`RunListing::warnings`].
    pub fn list_runs(&self) -> Result<RunListing> {
        let runs_dir = self.root.join("runs");
        let mut listing = RunListing::default();
        let mut entries: Vec<_> = fs::read_dir(&runs_dir)
            .map_err(io_err(&runs_dir))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .collect();
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let name = entry.file_name().to_string_lossy().into_owned();
            match self.run(&name) {
                Ok(run) => listing.runs.push(run.record),
                Err(e) => {
                    let msg = format!("skipping run `{name}`: {e}");
                    log::warn!("{msg}");
                    listing.warnings.push(msg);
                }
            }
        }
        listing.runs.sort_by(|a, b| {
            a.created_at
                .cmp(&b.created_at)
                .then_with(|| a.run_id.cmp(&b.run_id))
        });
        Ok(listing)
    }

    pub fn load_model(&self, model: &ModelRef) -> Result<LoadedModel> {
        self.run(&model.run_id)?.load_model(model.kind)
    }
}

/// One run directory and its record.
#[derive(Debug, Clone)]
pub struct Run {
    dir: PathBuf,
    record: RunRecord,
}

impl Run {
    pub fn id(&self) -> &str {
        &self.record.run_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    fn save_record(&self) -> Result<()> {
        write_json(&self.dir.join("run.json"), "run", &self.record)
    }

    pub fn model_ref(&self, kind: ModelKind) -> ModelRef {
        ModelRef {
            run_id: self.record.run_id.clone(),
            kind,
        }
    }

    fn register(&mut self, kinds: &[ModelKind]) -> Result<()> {
        for &kind in kinds {
            let key = ModelRef::key(kind);
            if !self.record.model_ids.contains(&key) {
                self.record.model_ids.push(key);
            }
        }
        self.record.model_ids.sort_by_key(|k| {
            ModelKind::from_str(k)
                .map(|k| k as usize)
                .unwrap_or(usize::MAX)
        });
        self.save_record()
    }

    pub fn models(&self) -> Vec<ModelKind> {
        self.record
            .model_ids
            .iter()
            .filter_map(|k| k.parse().ok())
            .collect()
    }

    pub fn has_model(&self, kind: ModelKind) -> bool {
        self.record.model_ids.contains(&ModelRef::key(kind))
    }

    pub fn set_config(&mut self, config: serde_json::Value) -> Result<()> {
        self.record.config = config;
        self.save_record()
    }

    fn corpus_path(&self) -> PathBuf {
        self.dir.join("corpus.jsonl")
    }

    pub fn save_corpus(&mut self, corpus: &TimeSlicedCorpus) -> Result<()> {
        save_corpus(&self.corpus_path(), corpus)?;
        self.record.fingerprint = Some(corpus_fingerprint(corpus));
        self.save_record()
    }

    pub fn load_corpus(&self) -> Result<TimeSlicedCorpus> {
        let corpus = load_corpus(&self.corpus_path())?;
        if let Some(expected) = &self.record.fingerprint {
            if &corpus_fingerprint(&corpus) != expected {
                return Err(corrupt(
                    &self.corpus_path(),
                    "corpus differs from the run's fingerprint",
                ));
            }
        }
        Ok(corpus)
    }

    fn op_dir(&self) -> PathBuf {
        self.dir.join("models").join("sgns-op")
    }

    /// Stores the two per-slice models of the OP pipeline (before alignment).
    pub fn save_op_models(
        &mut self,
        earlier: &EmbeddingModel,
        later: &EmbeddingModel,
    ) -> Result<()> {
        save_model(&self.op_dir().join("earlier.w2v"), earlier)?;
        save_model(&self.op_dir().join("later.w2v"), later)
    }

    pub fn load_op_models(&self) -> Result<(EmbeddingModel, EmbeddingModel)> {
        Ok((
            load_model(&self.op_dir().join("earlier.w2v"))?,
            load_model(&self.op_dir().join("later.w2v"))?,
        ))
    }

    pub fn save_aligned(&mut self, pair: &AlignedPair) -> Result<()> {
        save_aligned(&self.op_dir().join("aligned"), pair)?;
        self.register(&[ModelKind::SgnsOp])
    }

    pub fn load_aligned(&self) -> Result<AlignedPair> {
        load_aligned(&self.op_dir().join("aligned"))
    }

    pub fn save_wi(&mut self, wi: &WiModel) -> Result<()> {
        save_wi_model(&self.dir.join("models").join("sgns-wi"), wi)?;
        self.register(&[ModelKind::SgnsWi])
    }

    pub fn load_wi(&self) -> Result<WiModel> {
        load_wi_model(&self.dir.join("models").join("sgns-wi"))
    }

    /// Stores occurrence vectors and registers one model per embedder present.
    pub fn save_occurrences(&mut self, store: &OccurrenceStore) -> Result<()> {
        save_occurrences(&self.dir.join("occurrences.jsonl"), store)?;
        let kinds: Vec<ModelKind> = store
            .embedders()
            .into_iter()
            .map(|e| match e {
                Embedder::Prev => ModelKind::ElmoPrev,
                Embedder::Post => ModelKind::ElmoPost,
            })
            .collect();
        self.register(&kinds)
    }

    pub fn load_occurrences(&self) -> Result<OccurrenceStore> {
        load_occurrences(&self.dir.join("occurrences.jsonl"))
    }

    pub fn load_model(&self, kind: ModelKind) -> Result<LoadedModel> {
        if !self.has_model(kind) {
            return Err(StorageError::NotFound(self.model_ref(kind).to_string()));
        }
        Ok(match kind {
            ModelKind::SgnsOp => LoadedModel::Aligned(self.load_aligned()?),
            ModelKind::SgnsWi => LoadedModel::Injected(self.load_wi()?),
            ModelKind::ElmoPrev => {
                LoadedModel::Contextual(self.load_occurrences()?, Embedder::Prev)
            }
            ModelKind::ElmoPost => {
                LoadedModel::Contextual(self.load_occurrences()?, Embedder::Post)
            }
        })
    }

    fn artifact_path(&self, area: &str, kind: ModelKind, metric: MetricId, ext: &str) -> PathBuf {
        self.dir
            .join(area)
            .join(ModelRef::key(kind))
            .join(format!("{}.{ext}", metric.name()))
    }

    /// Stores a ranking and registers `kind` in the run, even when the
    /// model's vectors live elsewhere.
    pub fn save_ranking(&mut self, kind: ModelKind, artifact: &RankingArtifact) -> Result<()> {
        let metric = artifact.ranking.metric;
        write_json(
            &self.artifact_path("rankings", kind, metric, "json"),
            "ranking",
            artifact,
        )?;
        let csv = artifact.ranking.to_csv();
        write_atomic(&self.artifact_path("rankings", kind, metric, "csv"), |w| {
            w.write_all(csv.as_bytes())
        })?;
        self.register(&[kind])
    }

    pub fn load_ranking(&self, kind: ModelKind, metric: MetricId) -> Result<RankingArtifact> {
        read_json(
            &self.artifact_path("rankings", kind, metric, "json"),
            "ranking",
        )
    }

    pub fn save_evaluation(&mut self, kind: ModelKind, report: &EvaluationReport) -> Result<()> {
        let metric = report.metric;
        write_json(
            &self.artifact_path("results", kind, metric, "json"),
            "evaluation",
            report,
        )?;
        let csv = report.ranking.to_csv();
        write_atomic(&self.artifact_path("results", kind, metric, "csv"), |w| {
            w.write_all(csv.as_bytes())
        })?;
        self.register(&[kind])
    }

    pub fn load_evaluation(&self, kind: ModelKind, metric: MetricId) -> Result<EvaluationReport> {
        read_json(
            &self.artifact_path("results", kind, metric, "json"),
            "evaluation",
        )
    }

    /// Metrics with stored evaluations for `kind`, in display order.
    pub fn evaluated_metrics(&self, kind: ModelKind) -> Vec<MetricId> {
        MetricId::ALL
            .into_iter()
            .filter(|&m| self.artifact_path("results", kind, m, "json").is_file())
            .collect()
    }

    /// Metrics with a stored ranking or evaluation for `kind`.
    pub fn ranked_metrics(&self, kind: ModelKind) -> Vec<MetricId> {
        MetricId::ALL
            .into_iter()
            .filter(|&m| {
                self.artifact_path("results", kind, m, "json").is_file()
                    || self.artifact_path("rankings", kind, m, "json").is_file()
            })
            .collect()
    }

    /// The evaluated ranking if there is one, else the plain ranking.
    pub fn load_any_ranking(&self, kind: ModelKind, metric: MetricId) -> Result<RankingArtifact> {
        match self.load_evaluation(kind, metric) {
            Ok(report) => Ok(RankingArtifact {
                ranking: report.ranking,
                unscoreable: report.unscoreable,
                nonconverged: report.nonconverged,
            }),
            Err(StorageError::NotFound(_)) => self.load_ranking(kind, metric),
            Err(e) => Err(e),
        }
    }

    pub fn save_report(&self, report: &RunReport) -> Result<()> {
        write_json(&self.dir.join("report.json"), "report", report)
    }

    pub fn load_report(&self) -> Result<RunReport> {
        read_json(&self.dir.join("report.json"), "report")
    }

    fn projection_path(&self, kind: ModelKind, key: &str) -> PathBuf {
        self.dir
            .join("projections")
            .join(ModelRef::key(kind))
            .join(format!("{key}.json"))
    }

    pub fn save_projection(
        &self,
        kind: ModelKind,
        key: &str,
        projection: &ProjectionResult,
    ) -> Result<()> {
        write_json(&self.projection_path(kind, key), "projection", projection)
    }

    pub fn load_projection(&self, kind: ModelKind, key: &str) -> Result<ProjectionResult> {
        read_json(&self.projection_path(kind, key), "projection")
    }
}

/// Stable key for a projection request: hash of the word list and parameters.
pub fn projection_key(words: &[String], params: &crate::projection::TsneParams) -> String {
    let mut hasher = Sha256::new();
    for w in words {
        hasher.update(w.as_bytes());
        hasher.update([0u8]);
    }
    hasher.update(serde_json::to_vec(params).expect("params serialize"));
    hex::encode(&hasher.finalize()[..12])
}

/// Periods in the order a contextual store's cells are compared.
pub fn period_labels(store: &OccurrenceStore) -> [String; 2] {
    store
        .periods()
        .unwrap_or_else(|| Period::BOTH.map(|p| p.to_string()))
}
