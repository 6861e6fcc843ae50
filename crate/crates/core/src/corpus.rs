//! Tokenization, time-interval merging, vocabulary extraction and word
//! injection.
//!
//! Normalization is deliberately shallow: lowercase plus stripping of
//! punctuation at token edges. Archaic spellings, diacritics and mixed-script
//! text come through unchanged.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator placed between a target word and its period label by
/// [`inject_words`]. The tokenizer treats it as whitespace, so it never
/// occurs inside a token.
pub const DEFAULT_TAG_SEPARATOR: char = '⊕';

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("slice `{0}` received no documents")]
    EmptySlice(String),
    #[error("invalid intervals: {0}")]
    InvalidIntervals(String),
    #[error("invalid period label `{0}`: labels must be non-empty and free of whitespace and the tag separator")]
    InvalidLabel(String),
    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),
    #[error("tag separator `{0}` must be a single non-alphanumeric, non-whitespace character")]
    InvalidSeparator(char),
    #[error("token `{token}` contains the tag separator `{separator}`")]
    SeparatorInToken { token: String, separator: char },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

/// One of the two ordered time slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Period {
    Earlier,
    Later,
}

impl Period {
    pub const BOTH: [Period; 2] = [Period::Earlier, Period::Later];

    pub fn index(self) -> usize {
        match self {
            Period::Earlier => 0,
            Period::Later => 1,
        }
    }

    pub fn other(self) -> Period {
        match self {
            Period::Earlier => Period::Later,
            Period::Later => Period::Earlier,
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Period::Earlier => "earlier",
            Period::Later => "later",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    /// `None` when the source date was missing or unparseable.
    pub year: Option<i32>,
    pub region: Option<String>,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, year: i32, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            year: Some(year),
            region: None,
            text: text.into(),
        }
    }

    /// Year if it is a plausible 4-digit positive year.
    pub fn valid_year(&self) -> Option<i32> {
        self.year.filter(|y| (1000..=9999).contains(y))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub doc_id: String,
    pub index: usize,
    pub tokens: Vec<String>,
    pub period: Period,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    /// Characters that end a sentence when they trail a word.
    pub terminators: Vec<char>,
    /// Treated as whitespace so it can later serve as the injection tag separator.
    pub reserved: char,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            terminators: vec!['.', '!', '?', '…'],
            reserved: DEFAULT_TAG_SEPARATOR,
        }
    }
}

/// Splits raw text into sentences of normalized tokens.
pub fn tokenize(raw: &str, rules: &TokenizerConfig) -> Vec<Vec<String>> {
    let mut sentences = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let is_edge = |c: char| !c.is_alphanumeric();

    for word in raw.split(|c: char| c.is_whitespace() || c == rules.reserved) {
        if word.is_empty() {
            continue;
        }
        let core = word.trim_matches(is_edge);
        if !core.is_empty() {
            current.push(normalize_core(core, rules));
        }
        let suffix = &word[word.trim_end_matches(is_edge).len()..];
        if suffix.chars().any(|c| rules.terminators.contains(&c)) && !current.is_empty() {
            sentences.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    sentences
}

/// Normalizes an already-split token. Returns `None` if nothing is left.
pub fn normalize_token(token: &str, rules: &TokenizerConfig) -> Option<String> {
    let core = token.trim_matches(|c: char| !c.is_alphanumeric());
    if core.is_empty() || core.contains(rules.reserved) {
        None
    } else {
        Some(normalize_core(core, rules))
    }
}

fn normalize_core(core: &str, rules: &TokenizerConfig) -> String {
    if rules.lowercase {
        core.to_lowercase()
    } else {
        core.to_string()
    }
}

/// Inclusive range of years mapped to one period label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub label: String,
    pub start: i32,
    pub end: i32,
}

impl YearRange {
    pub fn new(label: impl Into<String>, start: i32, end: i32) -> Self {
        Self {
            label: label.into(),
            start,
            end,
        }
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.start..=self.end).contains(&year)
    }

    /// Two open-ended ranges, `pre<year>` and `post<year>`; `year` itself
    /// belongs to the later one.
    pub fn split_at(year: i32) -> [YearRange; 2] {
        [
            YearRange::new(format!("pre{year}"), i32::MIN, year - 1),
            YearRange::new(format!("post{year}"), year, i32::MAX),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExclusionReason {
    MissingDate,
    OutsideIntervals,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedDocument {
    pub id: String,
    pub year: Option<i32>,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone)]
pub struct Merged {
    pub corpus: TimeSlicedCorpus,
    pub excluded: Vec<ExcludedDocument>,
}

fn validate_label(label: &str) -> Result<(), CorpusError> {
    if label.is_empty()
        || label
            .chars()
            .any(|c| c.is_whitespace() || c == DEFAULT_TAG_SEPARATOR)
    {
        return Err(CorpusError::InvalidLabel(label.to_string()));
    }
    Ok(())
}

/// Assigns each dated document to the interval containing its year and
/// tokenizes it into that slice.
pub fn merge_slices(
    docs: &[Document],
    intervals: &[YearRange; 2],
    rules: &TokenizerConfig,
) -> Result<Merged, CorpusError> {
    let [first, second] = intervals;
    for range in intervals {
        validate_label(&range.label)?;
        if range.start > range.end {
            return Err(CorpusError::InvalidIntervals(format!(
                "`{}` starts after it ends",
                range.label
            )));
        }
    }
    if first.end >= second.start {
        return Err(CorpusError::InvalidIntervals(
            "intervals must be disjoint and in chronological order".into(),
        ));
    }
    if first.label == second.label {
        return Err(CorpusError::InvalidIntervals("labels must differ".into()));
    }

    let mut seen = BTreeSet::new();
    let mut excluded = Vec::new();
    let mut slices: [Vec<Sentence>; 2] = [Vec::new(), Vec::new()];
    let mut doc_counts = [0usize; 2];

    for doc in docs {
        if !seen.insert(doc.id.as_str()) {
            return Err(CorpusError::DuplicateDocument(doc.id.clone()));
        }
        let Some(year) = doc.valid_year() else {
            excluded.push(ExcludedDocument {
                id: doc.id.clone(),
                year: doc.year,
                reason: ExclusionReason::MissingDate,
            });
            continue;
        };
        let period = if first.contains(year) {
            Period::Earlier
        } else if second.contains(year) {
            Period::Later
        } else {
            excluded.push(ExcludedDocument {
                id: doc.id.clone(),
                year: Some(year),
                reason: ExclusionReason::OutsideIntervals,
            });
            continue;
        };
        doc_counts[period.index()] += 1;
        slices[period.index()].extend(tokenize(&doc.text, rules).into_iter().enumerate().map(
            |(index, tokens)| Sentence {
                doc_id: doc.id.clone(),
                index,
                tokens,
                period,
            },
        ));
    }

    for (range, count) in intervals.iter().zip(doc_counts) {
        if count == 0 {
            return Err(CorpusError::EmptySlice(range.label.clone()));
        }
    }
    if !excluded.is_empty() {
        log::warn!(
            "{} document(s) excluded while merging slices",
            excluded.len()
        );
    }

    let [earlier, later] = slices;
    let corpus = TimeSlicedCorpus::from_sentences(
        [first.label.clone(), second.label.clone()],
        earlier,
        later,
    )?;
    Ok(Merged { corpus, excluded })
}

/// Tokenized sentences partitioned into exactly two ordered slices.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSlicedCorpus {
    labels: [String; 2],
    slices: [Vec<Sentence>; 2],
    vocabulary: Vocabulary,
}

impl TimeSlicedCorpus {
    /// Builds a corpus from pre-tokenized sentences. Sentences are re-sorted by
    /// `(doc_id, index)` and their period is overwritten with the slice they
    /// were passed in.
    pub fn from_sentences(
        labels: [String; 2],
        earlier: Vec<Sentence>,
        later: Vec<Sentence>,
    ) -> Result<Self, CorpusError> {
        for label in &labels {
            validate_label(label)?;
        }
        if labels[0] == labels[1] {
            return Err(CorpusError::InvalidIntervals("labels must differ".into()));
        }
        let mut slices = [earlier, later];
        for (period, slice) in Period::BOTH.into_iter().zip(slices.iter_mut()) {
            slice.retain(|s| !s.tokens.is_empty());
            for sentence in slice.iter_mut() {
                sentence.period = period;
            }
            slice.sort_by(|a, b| (&a.doc_id, a.index).cmp(&(&b.doc_id, b.index)));
        }
        let vocabulary = Vocabulary::from_sentences(slices.iter().flatten(), 1);
        Ok(Self {
            labels,
            slices,
            vocabulary,
        })
    }

    /// Convenience constructor from bare token lists, one document per slice.
    pub fn from_token_lists(
        labels: [&str; 2],
        earlier: Vec<Vec<String>>,
        later: Vec<Vec<String>>,
    ) -> Result<Self, CorpusError> {
        let wrap = |lists: Vec<Vec<String>>, doc: &str, period| {
            lists
                .into_iter()
                .enumerate()
                .map(|(index, tokens)| Sentence {
                    doc_id: doc.to_string(),
                    index,
                    tokens,
                    period,
                })
                .collect::<Vec<_>>()
        };
        Self::from_sentences(
            [labels[0].to_string(), labels[1].to_string()],
            wrap(earlier, labels[0], Period::Earlier),
            wrap(later, labels[1], Period::Later),
        )
    }

    pub fn labels(&self) -> &[String; 2] {
        &self.labels
    }

    pub fn label(&self, period: Period) -> &str {
        &self.labels[period.index()]
    }

    pub fn slice(&self, period: Period) -> &[Sentence] {
        &self.slices[period.index()]
    }

    /// Sentences of both slices, earlier slice first.
    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.slices.iter().flatten()
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn token_count(&self, period: Period) -> u64 {
        self.slice(period)
            .iter()
            .map(|s| s.tokens.len() as u64)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub token: String,
    /// Occurrences in the earlier and later slice.
    pub counts: [u64; 2],
}

impl VocabEntry {
    pub fn total(&self) -> u64 {
        self.counts[0] + self.counts[1]
    }
}

/// Token ↔ dense id mapping with per-period frequencies.
///
/// Ids follow descending total frequency with ties broken lexicographically,
/// so re-extraction from the same corpus always yields the same ids.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "Vec<VocabEntry>", into = "Vec<VocabEntry>")]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    index: HashMap<String, usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl From<Vec<VocabEntry>> for Vocabulary {
    fn from(entries: Vec<VocabEntry>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.token.clone(), i))
            .collect();
        Self { entries, index }
    }
}

impl From<Vocabulary> for Vec<VocabEntry> {
    fn from(vocab: Vocabulary) -> Self {
        vocab.entries
    }
}

impl Vocabulary {
    pub fn from_counts(counts: HashMap<String, [u64; 2]>, min_count: u64) -> Self {
        let min_count = min_count.max(1);
        let mut entries: Vec<VocabEntry> = counts
            .into_iter()
            .map(|(token, counts)| VocabEntry { token, counts })
            .filter(|e| e.total() >= min_count)
            .collect();
        entries.sort_by(|a, b| {
            b.total()
                .cmp(&a.total())
                .then_with(|| a.token.cmp(&b.token))
        });
        entries.into()
    }

    pub fn from_sentences<'a>(
        sentences: impl IntoIterator<Item = &'a Sentence>,
        min_count: u64,
    ) -> Self {
        let mut counts: HashMap<String, [u64; 2]> = HashMap::new();
        for sentence in sentences {
            for token in &sentence.tokens {
                counts.entry(token.clone()).or_default()[sentence.period.index()] += 1;
            }
        }
        Self::from_counts(counts, min_count)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.entries[id].token
    }

    pub fn entry(&self, id: usize) -> &VocabEntry {
        &self.entries[id]
    }

    pub fn counts(&self, token: &str) -> Option<[u64; 2]> {
        self.id(token).map(|id| self.entries[id].counts)
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.token.as_str())
    }
}

pub fn extract_vocabulary(corpus: &TimeSlicedCorpus, min_count: u64) -> Vocabulary {
    Vocabulary::from_sentences(corpus.sentences(), min_count)
}

/// The two period-specific tokens a target word is rewritten into.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagPair {
    pub earlier: String,
    pub later: String,
}

impl TagPair {
    pub fn get(&self, period: Period) -> &str {
        match period {
            Period::Earlier => &self.earlier,
            Period::Later => &self.later,
        }
    }
}

/// A target that could not be tagged because it is absent from one or both slices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingTarget {
    pub word: String,
    pub absent_from: Vec<Period>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    /// Earlier slice followed by the later slice, with targets rewritten.
    pub stream: Vec<Sentence>,
    pub tags: BTreeMap<String, TagPair>,
    pub missing: Vec<MissingTarget>,
    pub separator: char,
}

pub fn tag_token(word: &str, label: &str, separator: char) -> String {
    format!("{word}{separator}{label}")
}

/// Rewrites every occurrence of each target word with a period-tagged token.
///
/// Targets absent from either slice are left untouched and reported in
/// [`Injection::missing`].
pub fn inject_words(
    corpus: &TimeSlicedCorpus,
    targets: &BTreeSet<String>,
    separator: char,
) -> Result<Injection, CorpusError> {
    if separator.is_alphanumeric() || separator.is_whitespace() {
        return Err(CorpusError::InvalidSeparator(separator));
    }
    if let Some(token) = corpus.vocabulary().tokens().find(|t| t.contains(separator)) {
        return Err(CorpusError::SeparatorInToken {
            token: token.to_string(),
            separator,
        });
    }

    let mut tags = BTreeMap::new();
    let mut missing = Vec::new();
    for word in targets {
        let counts = corpus.vocabulary().counts(word).unwrap_or([0, 0]);
        let absent_from: Vec<Period> = Period::BOTH
            .into_iter()
            .filter(|p| counts[p.index()] == 0)
            .collect();
        if absent_from.is_empty() {
            tags.insert(
                word.clone(),
                TagPair {
                    earlier: tag_token(word, corpus.label(Period::Earlier), separator),
                    later: tag_token(word, corpus.label(Period::Later), separator),
                },
            );
        } else {
            log::warn!("target `{word}` missing from {absent_from:?}; not injected");
            missing.push(MissingTarget {
                word: word.clone(),
                absent_from,
            });
        }
    }

    let stream = corpus
        .sentences()
        .map(|s| Sentence {
            tokens: s
                .tokens
                .iter()
                .map(|t| match tags.get(t) {
                    Some(pair) => pair.get(s.period).to_string(),
                    None => t.clone(),
                })
                .collect(),
            ..s.clone()
        })
        .collect();

    Ok(Injection {
        stream,
        tags,
        missing,
        separator,
    })
}

/// Removes injection tags, restoring the plain token stream.
pub fn strip_tags(stream: &[Sentence], separator: char) -> Vec<Sentence> {
    stream
        .iter()
        .map(|s| Sentence {
            tokens: s
                .tokens
                .iter()
                .map(|t| match t.split_once(separator) {
                    Some((word, _)) => word.to_string(),
                    None => t.clone(),
                })
                .collect(),
            ..s.clone()
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct ManifestEntry {
    path: PathBuf,
    id: String,
    #[serde(default)]
    year: Option<serde_json::Value>,
    #[serde(default)]
    region: Option<String>,
}

fn parse_year(value: &serde_json::Value) -> Option<i32> {
    match value {
        serde_json::Value::Number(n) => n.as_i64().and_then(|y| i32::try_from(y).ok()),
        serde_json::Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Reads a JSON manifest of `{path, id, year, region}` entries. Paths are
/// resolved relative to the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| CorpusError::Io { path: p, source }
    };
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&raw).map_err(|e| CorpusError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut docs = Vec::with_capacity(entries.len());
    let mut undated = 0;
    for entry in entries {
        let file = base.join(&entry.path);
        let text = fs::read_to_string(&file).map_err(io_err(&file))?;
        let year = entry.year.as_ref().and_then(parse_year);
        if year.is_none() {
            undated += 1;
        }
        docs.push(Document {
            id: entry.id,
            year,
            region: entry.region,
            text,
        });
    }
    if undated > 0 {
        log::warn!("{undated} manifest entr(ies) without a usable year");
    }
    Ok(docs)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CorpusError> {
    let entries = fs::read_dir(dir).map_err(|source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for entry in entries {
        let path = entry
            .map_err(|source| CorpusError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Loads the `corpus1/` + `corpus2/` layout: one pre-tokenized sentence per
/// line. Tokens still go through edge-punctuation stripping and lowercasing.
pub fn load_semeval(root: &Path, rules: &TokenizerConfig) -> Result<TimeSlicedCorpus, CorpusError> {
    let mut slices: [Vec<Sentence>; 2] = [Vec::new(), Vec::new()];
    for (period, folder) in Period::BOTH.into_iter().zip(["corpus1", "corpus2"]) {
        let mut files = Vec::new();
        collect_files(&root.join(folder), &mut files)?;
        files.sort();
        for file in files {
            let text = fs::read_to_string(&file).map_err(|source| CorpusError::Io {
                path: file.clone(),
                source,
            })?;
            let doc_id = file
                .strip_prefix(root)
                .unwrap_or(&file)
                .to_string_lossy()
                .into_owned();
            for (index, line) in text.lines().enumerate() {
                let tokens: Vec<String> = line
                    .split_whitespace()
                    .filter_map(|t| normalize_token(t, rules))
                    .collect();
                if !tokens.is_empty() {
                    slices[period.index()].push(Sentence {
                        doc_id: doc_id.clone(),
                        index,
                        tokens,
                        period,
                    });
                }
            }
        }
    }
    let [earlier, later] = slices;
    TimeSlicedCorpus::from_sentences(["corpus1".into(), "corpus2".into()], earlier, later)
}
