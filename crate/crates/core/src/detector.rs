//! Scoring, ranking, thresholding and evaluation of target words.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::AlignedPair;
use crate::corpus::Period;
use crate::metrics::{
    apd, cluster_count_change, jsd_change, AffinityConfig, BrayCurtisForm, ClusterScore, Distance,
    Embedder, MetricError, OccurrenceStore,
};
use crate::sgns::WiModel;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("unknown metric `{name}`; valid metrics: {}", MetricId::valid_names())]
    UnknownMetric { name: String },
    #[error("unknown model kind `{0}`; valid kinds: sgns-op, sgns-wi, elmo-prev, elmo-post")]
    UnknownModelKind(String),
    #[error("metric {metric} cannot be computed on a {model} model")]
    ModelMetricMismatch { model: ModelKind, metric: MetricId },
    #[error("gold lists are empty")]
    EmptyGold,
    #[error("none of the scored words is labeled in the gold lists")]
    NoLabeledWords,
    #[error("no scores to rank")]
    EmptyScores,
    #[error("words listed as both changed and stable: {}", .0.join(", "))]
    OverlappingGold(Vec<String>),
    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),
    #[error("occurrence store does not name exactly two periods")]
    MissingPeriods,
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, DetectorError>;

/// Every change score the toolkit can compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricId {
    Static(Distance),
    Apd(Distance),
    Jsd,
    ClusterCount,
}

impl MetricId {
    pub const ALL: [MetricId; 12] = [
        MetricId::Static(Distance::Euclidean),
        MetricId::Static(Distance::Manhattan),
        MetricId::Static(Distance::Canberra),
        MetricId::Static(Distance::Cosine),
        MetricId::Static(Distance::BrayCurtis),
        MetricId::Static(Distance::Correlation),
        MetricId::Apd(Distance::Euclidean),
        MetricId::Apd(Distance::Manhattan),
        MetricId::Apd(Distance::Canberra),
        MetricId::Apd(Distance::Cosine),
        MetricId::Jsd,
        MetricId::ClusterCount,
    ];

    pub fn name(self) -> String {
        match self {
            MetricId::Static(d) => d.name().to_string(),
            MetricId::Apd(d) => format!("apd-{}", d.name()),
            MetricId::Jsd => "jsd".to_string(),
            MetricId::ClusterCount => "cluster-count".to_string(),
        }
    }

    pub fn valid_names() -> String {
        MetricId::ALL.map(|m| m.name()).join(", ")
    }

    pub fn is_static(self) -> bool {
        matches!(self, MetricId::Static(_))
    }

    /// Metrics applicable to a model kind, in display order.
    pub fn for_kind(kind: ModelKind) -> Vec<MetricId> {
        MetricId::ALL
            .into_iter()
            .filter(|m| m.is_static() == kind.is_static())
            .collect()
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for MetricId {
    type Err = DetectorError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        MetricId::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| DetectorError::UnknownMetric {
                name: s.to_string(),
            })
    }
}

impl Serialize for MetricId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for MetricId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which representation a model compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "SGNS-OP")]
    SgnsOp,
    #[serde(rename = "SGNS-WI")]
    SgnsWi,
    /// Occurrences from the earlier-slice contextualizer in both periods.
    #[serde(rename = "ELMO-PREV")]
    ElmoPrev,
    /// Occurrences from the later-slice contextualizer in both periods.
    #[serde(rename = "ELMO-POST")]
    ElmoPost,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::SgnsOp,
        ModelKind::SgnsWi,
        ModelKind::ElmoPrev,
        ModelKind::ElmoPost,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SgnsOp => "SGNS-OP",
            ModelKind::SgnsWi => "SGNS-WI",
            ModelKind::ElmoPrev => "ELMO-PREV",
            ModelKind::ElmoPost => "ELMO-POST",
        }
    }

    pub fn is_static(self) -> bool {
        matches!(self, ModelKind::SgnsOp | ModelKind::SgnsWi)
    }

    pub fn embedder(self) -> Option<Embedder> {
        match self {
            ModelKind::ElmoPrev => Some(Embedder::Prev),
            ModelKind::ElmoPost => Some(Embedder::Post),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = DetectorError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace('_', "-");
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| DetectorError::UnknownModelKind(s.to_string()))
    }
}

/// The trained or ingested representations a model kind scores from.
#[derive(Debug, Clone, Copy)]
pub enum ModelArtifacts<'a> {
    Aligned(&'a AlignedPair),
    Injected(&'a WiModel),
    Contextual {
        store: &'a OccurrenceStore,
        embedder: Embedder,
    },
}

impl ModelArtifacts<'_> {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelArtifacts::Aligned(_) => ModelKind::SgnsOp,
            ModelArtifacts::Injected(_) => ModelKind::SgnsWi,
            ModelArtifacts::Contextual {
                embedder: Embedder::Prev,
                ..
            } => ModelKind::ElmoPrev,
            ModelArtifacts::Contextual {
                embedder: Embedder::Post,
                ..
            } => ModelKind::ElmoPost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UnscoreableReason {
    /// No representation in the listed periods.
    TargetMissing { periods: Vec<String> },
    /// The metric is undefined for this pair (zero or constant vector, ...).
    Undefined { message: String },
    /// The metric evaluated to a non-finite value.
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unscoreable {
    pub word: String,
    pub reason: UnscoreableReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordScore {
    pub word: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreOutcome {
    pub scores: Vec<WordScore>,
    pub unscoreable: Vec<Unscoreable>,
    /// Words whose clustering did not converge (score kept, flagged).
    pub nonconverged: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreOptions {
    pub bray_curtis: BrayCurtisForm,
    pub affinity: AffinityConfig,
    pub threads: usize,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            bray_curtis: BrayCurtisForm::TermWise,
            affinity: AffinityConfig::default(),
            threads: 1,
        }
    }
}

enum WordResult {
    Score(f64, bool),
    Skip(UnscoreableReason),
}

fn finite(value: f64, converged: bool) -> WordResult {
    if value.is_finite() {
        WordResult::Score(value, converged)
    } else {
        WordResult::Skip(UnscoreableReason::NonFinite)
    }
}

fn undefined(e: MetricError) -> WordResult {
    WordResult::Skip(UnscoreableReason::Undefined {
        message: e.to_string(),
    })
}

fn static_pair(
    artifacts: &ModelArtifacts<'_>,
    word: &str,
) -> std::result::Result<(Vec<f64>, Vec<f64>), Vec<String>> {
    match artifacts {
        ModelArtifacts::Aligned(pair) => pair
            .vectors(word)
            .map(|(a, b)| (a.to_vec(), b.to_vec()))
            .ok_or_else(|| pair.labels().to_vec()),
        ModelArtifacts::Injected(wi) => {
            let a = wi.vector(word, Period::Earlier);
            let b = wi.vector(word, Period::Later);
            match (a, b) {
                (Some(a), Some(b)) => Ok((a.to_vec(), b.to_vec())),
                _ => Err(wi
                    .missing
                    .iter()
                    .find(|m| m.word == word)
                    .map(|m| m.absent_from.iter().map(|p| p.to_string()).collect())
                    .unwrap_or_else(|| Period::BOTH.iter().map(|p| p.to_string()).collect())),
            }
        }
        ModelArtifacts::Contextual { .. } => unreachable!("static metric on contextual model"),
    }
}

fn score_word(
    artifacts: &ModelArtifacts<'_>,
    periods: Option<&[String; 2]>,
    metric: MetricId,
    word: &str,
    options: &ScoreOptions,
) -> WordResult {
    match (metric, artifacts) {
        (MetricId::Static(distance), _) => match static_pair(artifacts, word) {
            Err(periods) => WordResult::Skip(UnscoreableReason::TargetMissing { periods }),
            Ok((a, b)) => match distance.compute(&a, &b, options.bray_curtis) {
                Ok(v) => finite(v, true),
                Err(e) => undefined(e),
            },
        },
        (_, ModelArtifacts::Contextual { store, embedder }) => {
            let [earlier, later] = periods.expect("periods resolved for contextual models");
            let a = store
                .get(word, *embedder, earlier)
                .filter(|s| !s.is_empty());
            let b = store.get(word, *embedder, later).filter(|s| !s.is_empty());
            let (a, b) = match (a, b) {
                (Some(a), Some(b)) => (a, b),
                (a, b) => {
                    let mut missing = Vec::new();
                    if a.is_none() {
                        missing.push(earlier.clone());
                    }
                    if b.is_none() {
                        missing.push(later.clone());
                    }
                    return WordResult::Skip(UnscoreableReason::TargetMissing { periods: missing });
                }
            };
            let clustered = |r: std::result::Result<ClusterScore, MetricError>| match r {
                Ok(c) => finite(c.value, c.converged),
                Err(e) => undefined(e),
            };
            match metric {
                MetricId::Apd(distance) => match apd(a, b, distance) {
                    Ok(v) => finite(v, true),
                    Err(e) => undefined(e),
                },
                MetricId::Jsd => clustered(jsd_change(a, b, &options.affinity)),
                MetricId::ClusterCount => clustered(cluster_count_change(a, b, &options.affinity)),
                MetricId::Static(_) => unreachable!(),
            }
        }
        _ => unreachable!("checked by score_targets"),
    }
}

/// Scores each target under `metric`. Targets without a representation in
/// both periods, or for which the metric is undefined, are reported in
/// [`ScoreOutcome::unscoreable`] instead of being scored.
pub fn score_targets(
    artifacts: ModelArtifacts<'_>,
    metric: MetricId,
    targets: &[String],
    options: &ScoreOptions,
) -> Result<ScoreOutcome> {
    let kind = artifacts.kind();
    if metric.is_static() != kind.is_static() {
        return Err(DetectorError::ModelMetricMismatch {
            model: kind,
            metric,
        });
    }
    let periods = match artifacts {
        ModelArtifacts::Contextual { store, .. } => {
            Some(store.periods().ok_or(DetectorError::MissingPeriods)?)
        }
        _ => None,
    };
    let mut unique: Vec<&String> = targets
        .iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    unique.sort();

    let run = |words: &[&String]| -> Vec<(String, WordResult)> {
        words
            .iter()
            .map(|w| {
                let r = score_word(&artifacts, periods.as_ref(), metric, w, options);
                ((*w).clone(), r)
            })
            .collect()
    };
    let threads = options.threads.clamp(1, unique.len().max(1));
    let results: Vec<(String, WordResult)> = if threads == 1 {
        run(&unique)
    } else {
        let chunk = unique.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = unique
                .chunks(chunk)
                .map(|c| scope.spawn(move || run(c)))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("scoring worker panicked"))
                .collect()
        })
    };

    let mut outcome = ScoreOutcome::default();
    for (word, result) in results {
        match result {
            WordResult::Score(score, converged) => {
                if !converged {
                    outcome.nonconverged.push(word.clone());
                }
                outcome.scores.push(WordScore { word, score });
            }
            WordResult::Skip(reason) => outcome.unscoreable.push(Unscoreable { word, reason }),
        }
    }
    if !outcome.nonconverged.is_empty() {
        log::warn!(
            "clustering did not converge for {} word(s) under {metric}",
            outcome.nonconverged.len()
        );
    }
    Ok(outcome)
}

/// How the change threshold θ is chosen; a word is flagged when its score
/// is strictly greater than θ.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "policy", content = "value", rename_all = "kebab-case")]
pub enum ThresholdPolicy {
    /// Arithmetic mean of the scores.
    #[default]
    Mean,
    Absolute(f64),
    /// The q-quantile of the scores (linear interpolation), q in [0, 1].
    Quantile(f64),
}

impl ThresholdPolicy {
    pub fn threshold(&self, scores: &[f64]) -> Result<f64> {
        if scores.is_empty() {
            return Err(DetectorError::EmptyScores);
        }
        match *self {
            ThresholdPolicy::Mean => Ok(scores.iter().sum::<f64>() / scores.len() as f64),
            ThresholdPolicy::Absolute(t) if t.is_nan() => {
                Err(DetectorError::InvalidThreshold("NaN".into()))
            }
            ThresholdPolicy::Absolute(t) => Ok(t),
            ThresholdPolicy::Quantile(q) if !(0.0..=1.0).contains(&q) => Err(
                DetectorError::InvalidThreshold(format!("quantile {q} outside [0, 1]")),
            ),
            ThresholdPolicy::Quantile(q) => {
                let mut sorted = scores.to_vec();
                sorted.sort_by(f64::total_cmp);
                let pos = q * (sorted.len() - 1) as f64;
                let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
                Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
            }
        }
    }
}

impl FromStr for ThresholdPolicy {
    type Err = DetectorError;

    /// `mean`, `absolute:<θ>` or `quantile:<q>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            DetectorError::InvalidThreshold(format!(
                "`{s}` (expected mean, absolute:<x> or quantile:<q>)"
            ))
        };
        let (kind, value) = match s.split_once(':') {
            Some((k, v)) => (k.trim(), Some(v.trim().parse::<f64>().map_err(|_| bad())?)),
            None => (s.trim(), None),
        };
        match (kind, value) {
            ("mean", None) => Ok(ThresholdPolicy::Mean),
            ("absolute", Some(v)) => Ok(ThresholdPolicy::Absolute(v)),
            ("quantile", Some(q)) if (0.0..=1.0).contains(&q) => Ok(ThresholdPolicy::Quantile(q)),
            _ => Err(bad()),
        }
    }
}

/// Flags every word whose score exceeds the policy's threshold.
pub fn binarize(
    scores: &[WordScore],
    policy: ThresholdPolicy,
) -> Result<(f64, BTreeMap<String, bool>)> {
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let theta = policy.threshold(&values)?;
    let verdicts = scores
        .iter()
        .map(|s| (s.word.clone(), s.score > theta))
        .collect();
    Ok((theta, verdicts))
}

/// Scored targets in descending order of change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeRanking {
    pub model_id: String,
    pub metric: MetricId,
    pub entries: Vec<WordScore>,
    pub threshold: f64,
    pub policy: ThresholdPolicy,
    pub verdicts: BTreeMap<String, bool>,
}

impl ChangeRanking {
    /// Sorts by descending score, ties broken lexicographically, and applies
    /// the threshold policy.
    pub fn build(
        model_id: impl Into<String>,
        metric: MetricId,
        mut scores: Vec<WordScore>,
        policy: ThresholdPolicy,
    ) -> Result<Self> {
        scores.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.word.cmp(&b.word))
        });
        let (threshold, verdicts) = binarize(&scores, policy)?;
        Ok(Self {
            model_id: model_id.into(),
            metric,
            entries: scores,
            threshold,
            policy,
            verdicts,
        })
    }

    /// 1-based position of `word`.
    pub fn rank_of(&self, word: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.word == word)
            .map(|i| i + 1)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &WordScore> {
        self.entries.iter().filter(|e| self.verdicts[&e.word])
    }

    /// `rank,word,score,changed` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["rank", "word", "score", "changed"])
            .and_then(|_| {
                self.entries.iter().enumerate().try_for_each(|(i, e)| {
                    w.write_record([
                        (i + 1).to_string(),
                        e.word.clone(),
                        e.score.to_string(),
                        self.verdicts[&e.word].to_string(),
                    ])
                })
            })
            .expect("writing to memory cannot fail");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("input is UTF-8")
    }
}

/// Gold changed and stable words.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetLists {
    pub changed: BTreeSet<String>,
    pub stable: BTreeSet<String>,
}

impl TargetLists {
    pub fn new(changed: BTreeSet<String>, stable: BTreeSet<String>) -> Result<Self> {
        let overlap: Vec<String> = changed.intersection(&stable).cloned().collect();
        if !overlap.is_empty() {
            return Err(DetectorError::OverlappingGold(overlap));
        }
        Ok(Self { changed, stable })
    }

    /// Reads two one-word-per-line files. Blank lines and lines starting
    /// with `#` are ignored.
    pub fn load(changed: &Path, stable: &Path) -> Result<Self> {
        Self::new(
            read_word_list(changed)?.into_iter().collect(),
            read_word_list(stable)?.into_iter().collect(),
        )
    }

    /// `Some(true)` for changed, `Some(false)` for stable, `None` if unlabeled.
    pub fn label(&self, word: &str) -> Option<bool> {
        if self.changed.contains(word) {
            Some(true)
        } else if self.stable.contains(word) {
            Some(false)
        } else {
            None
        }
    }

    pub fn all(&self) -> Vec<String> {
        self.changed.union(&self.stable).cloned().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.changed.is_empty() && self.stable.is_empty()
    }
}

/// One word per line; blank lines and `#` comments skipped.
pub fn read_word_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|source| DetectorError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// `(tp + tn) / total`, or `None` when nothing was counted.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| (self.tp + self.tn) as f64 / total as f64)
    }
}

/// Two-decimal display value, halves rounded up.
pub fn display_score(score: f64) -> f64 {
    (score * 100.0).round() / 100.0
}

/// Counts verdicts against the gold lists; unlabeled words are ignored.
pub fn evaluate(verdicts: &BTreeMap<String, bool>, gold: &TargetLists) -> Result<Confusion> {
    if gold.is_empty() {
        return Err(DetectorError::EmptyGold);
    }
    let mut c = Confusion::default();
    for (word, &flagged) in verdicts {
        match (gold.label(word), flagged) {
            (Some(true), true) => c.tp += 1,
            (Some(false), false) => c.tn += 1,
            (Some(false), true) => c.fp += 1,
            (Some(true), false) => c.fn_ += 1,
            (None, _) => {}
        }
    }
    if c.total() == 0 {
        return Err(DetectorError::NoLabeledWords);
    }
    Ok(c)
}

/// 1-based ranking position of each stable word present in `ranking`.
pub fn stable_rank_eval(
    ranking: &ChangeRanking,
    stable: &BTreeSet<String>,
) -> BTreeMap<String, usize> {
    stable
        .iter()
        .filter_map(|w| ranking.rank_of(w).map(|r| (w.clone(), r)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model_id: String,
    pub metric: MetricId,
    #[serde(flatten)]
    pub confusion: Confusion,
    /// Full-precision accuracy.
    pub score: f64,
    /// `score` rounded to two decimals.
    pub display_score: f64,
    pub stable_ranks: BTreeMap<String, usize>,
    pub ranking: ChangeRanking,
    pub unscoreable: Vec<Unscoreable>,
    pub nonconverged: Vec<String>,
}

impl EvaluationReport {
    pub fn from_outcome(
        model_id: &str,
        metric: MetricId,
        outcome: ScoreOutcome,
        gold: &TargetLists,
        policy: ThresholdPolicy,
    ) -> Result<Self> {
        if gold.is_empty() {
            return Err(DetectorError::EmptyGold);
        }
        let ranking = ChangeRanking::build(model_id, metric, outcome.scores, policy)?;
        let confusion = evaluate(&ranking.verdicts, gold)?;
        let score = confusion
            .accuracy()
            .expect("evaluate counts at least one word");
        Ok(Self {
            model_id: model_id.to_string(),
            metric,
            confusion,
            score,
            display_score: display_score(score),
            stable_ranks: stable_rank_eval(&ranking, &gold.stable),
            ranking,
            unscoreable: outcome.unscoreable,
            nonconverged: outcome.nonconverged,
        })
    }
}

/// Scores every gold word under `metric`, ranks, thresholds and evaluates.
pub fn detect(
    artifacts: ModelArtifacts<'_>,
    model_id: &str,
    metric: MetricId,
    gold: &TargetLists,
    policy: ThresholdPolicy,
    options: &ScoreOptions,
) -> Result<EvaluationReport> {
    if gold.is_empty() {
        return Err(DetectorError::EmptyGold);
    }
    let outcome = score_targets(artifacts, metric, &gold.all(), options)?;
    EvaluationReport::from_outcome(model_id, metric, outcome, gold, policy)
}
