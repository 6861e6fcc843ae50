//! Generated fixtures with known ground truth.
//!
//! The real diachronic corpora are not redistributable, so tests and demos
//! run on corpora whose changed and stable words are planted by
//! construction.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Period, Sentence, TimeSlicedCorpus};
use crate::detector::{TargetLists, WordScore};

const FUNCTION_WORDS: [&str; 8] = ["the", "a", "of", "and", "to", "in", "was", "with"];
const TOPICS: usize = 12;
const WORDS_PER_TOPIC: usize = 12;

fn topic_word(topic: usize, j: usize) -> String {
    format!("t{topic}w{j}")
}

fn topic_sentence(rng: &mut ChaCha8Rng, topic: usize, target: Option<&str>) -> Vec<String> {
    let len = rng.random_range(8..=12);
    let mut tokens: Vec<String> = (0..len)
        .map(|_| {
            if rng.random_bool(0.75) {
                topic_word(topic, rng.random_range(0..WORDS_PER_TOPIC))
            } else {
                FUNCTION_WORDS.choose(rng).unwrap().to_string()
            }
        })
        .collect();
    if let Some(word) = target {
        let at = rng.random_range(0..=tokens.len());
        tokens.insert(at, word.to_string());
    }
    tokens
}

/// Two-slice corpus with planted semantic change.
#[derive(Debug, Clone)]
pub struct DriftFixture {
    pub corpus: TimeSlicedCorpus,
    /// Context distribution fully swapped between slices.
    pub drifted: String,
    /// Half of the later-slice usages moved to a different topic.
    pub partial: Vec<String>,
    /// Identical context distribution in both slices.
    pub controls: Vec<String>,
    /// Non-target words that appear in both slices.
    pub context_words: Vec<String>,
}

impl DriftFixture {
    pub const DRIFTED: &'static str = "leaf";
    pub const PARTIAL: [&'static str; 5] = ["lift", "disease", "maid", "drug", "justice"];
    pub const CONTROLS: [&'static str; 5] = ["water", "stone", "hand", "sun", "night"];

    /// All planted targets, drifted word first.
    pub fn targets(&self) -> Vec<String> {
        std::iter::once(&self.drifted)
            .chain(&self.partial)
            .chain(&self.controls)
            .cloned()
            .collect()
    }

    pub fn target_set(&self) -> BTreeSet<String> {
        self.targets().into_iter().collect()
    }

    pub fn gold(&self) -> TargetLists {
        TargetLists {
            changed: std::iter::once(&self.drifted)
                .chain(&self.partial)
                .cloned()
                .collect(),
            stable: self.controls.iter().cloned().collect(),
        }
    }

    /// Topics a target's usages are drawn from, per slice, as (topic, weight).
    fn usage_topics(target: usize, period: Period) -> Vec<(usize, f64)> {
        match (target, period) {
            (0, Period::Earlier) => vec![(0, 1.0)],
            (0, Period::Later) => vec![(1, 1.0)],
            (1..=5, Period::Earlier) => vec![(6 + target, 1.0)],
            (1..=5, Period::Later) => vec![(6 + target, 0.5), (6 + target % 5 + 1, 0.5)],
            (_, _) => vec![(target - 4, 1.0)],
        }
    }
}

/// Generates the drift fixture with roughly `tokens_per_slice` tokens in each slice.
///
/// Forty percent of sentences carry exactly one target word; the rest are
/// background sentences over random topics, which keep the shared
/// vocabulary anchored in both slices.
pub fn drift_corpus(seed: u64, tokens_per_slice: usize) -> DriftFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<&str> = std::iter::once(DriftFixture::DRIFTED)
        .chain(DriftFixture::PARTIAL)
        .chain(DriftFixture::CONTROLS)
        .collect();

    let mut slices: [Vec<Vec<String>>; 2] = [Vec::new(), Vec::new()];
    for period in Period::BOTH {
        let slice = &mut slices[period.index()];
        let mut tokens = 0;
        while tokens < tokens_per_slice {
            let sentence = if rng.random_bool(0.4) {
                let t = rng.random_range(0..targets.len());
                let topics = DriftFixture::usage_topics(t, period);
                let topic = topics
                    .choose_weighted(&mut rng, |(_, w)| *w)
                    .map(|(topic, _)| *topic)
                    .unwrap();
                topic_sentence(&mut rng, topic, Some(targets[t]))
            } else {
                let topic = rng.random_range(0..TOPICS);
                topic_sentence(&mut rng, topic, None)
            };
            tokens += sentence.len();
            slice.push(sentence);
        }
    }
    let [earlier, later] = slices;
    let corpus = TimeSlicedCorpus::from_token_lists(["pre1900", "post1900"], earlier, later)
        .expect("fixture labels are valid");
    let context_words = (0..TOPICS)
        .flat_map(|t| (0..WORDS_PER_TOPIC).map(move |j| topic_word(t, j)))
        .filter(|w| {
            corpus
                .vocabulary()
                .counts(w)
                .is_some_and(|c| c[0] > 0 && c[1] > 0)
        })
        .collect();

    DriftFixture {
        corpus,
        drifted: DriftFixture::DRIFTED.to_string(),
        partial: DriftFixture::PARTIAL
            .iter()
            .map(|s| s.to_string())
            .collect(),
        controls: DriftFixture::CONTROLS
            .iter()
            .map(|s| s.to_string())
            .collect(),
        context_words,
    }
}

/// Sentences in which `alpha` and `alpha2` are interchangeable: each usage
/// of the pair picks one of the two at random from the same topic.
pub fn synonym_corpus(seed: u64, sentences: usize) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..sentences)
        .map(|index| {
            let topic = rng.random_range(0..TOPICS);
            let target = match topic {
                0 => Some(if rng.random_bool(0.5) {
                    "alpha"
                } else {
                    "alpha2"
                }),
                _ => None,
            };
            Sentence {
                doc_id: "synonyms".into(),
                index,
                tokens: topic_sentence(&mut rng, topic, target),
                period: Period::Earlier,
            }
        })
        .collect()
}

/// Non-target word from a topic other than the one `alpha` lives in.
pub fn unrelated_word(rng: &mut impl Rng) -> String {
    topic_word(
        rng.random_range(1..TOPICS),
        rng.random_range(0..WORDS_PER_TOPIC),
    )
}

/// Isotropic Gaussian blobs: `per_blob` points around each center.
/// Returns the points and their blob index.
pub fn gaussian_blobs(
    centers: &[Vec<f64>],
    per_blob: usize,
    sigma: f64,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    let mut points = Vec::with_capacity(centers.len() * per_blob);
    let mut labels = Vec::with_capacity(centers.len() * per_blob);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            points.push(center.iter().map(|c| c + normal.sample(&mut rng)).collect());
            labels.push(label);
        }
    }
    (points, labels)
}

/// `count` random centers in `dim` dimensions, pairwise at least `min_gap` apart.
pub fn separated_centers(count: usize, dim: usize, min_gap: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = min_gap * 2.0;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
    while centers.len() < count {
        let candidate: Vec<f64> = (0..dim)
            .map(|_| rng.random_range(-spread..spread))
            .collect();
        let far = centers.iter().all(|c| {
            c.iter()
                .zip(&candidate)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
                >= min_gap
        });
        if far {
            centers.push(candidate);
        }
    }
    centers
}

/// Scores and gold lists whose evaluation under `absolute:0.5` yields exactly
/// the confusion counts `(tp, tn, fp, fn)`. Flagged words score 1, others 0.
pub fn confusion_fixture(tp: u64, tn: u64, fp: u64, fn_: u64) -> (Vec<WordScore>, TargetLists) {
    let mut scores = Vec::new();
    let mut changed = BTreeSet::new();
    let mut stable = BTreeSet::new();
    let groups = [
        ("tp", tp, 1.0, true),
        ("tn", tn, 0.0, false),
        ("fp", fp, 1.0, false),
        ("fn", fn_, 0.0, true),
    ];
    for (prefix, count, score, is_changed) in groups {
        for i in 0..count {
            let word = format!("{prefix}{i:03}");
            scores.push(WordScore {
                word: word.clone(),
                score,
            });
            if is_changed {
                changed.insert(word);
            } else {
                stable.insert(word);
            }
        }
    }
    let gold = TargetLists::new(changed, stable).expect("prefixes keep the lists disjoint");
    (scores, gold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_fixture_shape() {
        let fx = drift_corpus(3, 25_000);
        let vocab = fx.corpus.vocabulary();
        for period in Period::BOTH {
            let n = fx.corpus.token_count(period);
            assert!((25_000..25_100).contains(&n), "{n}");
        }
        for target in fx.targets() {
            let counts = vocab.counts(&target).unwrap();
            assert!(counts[0] > 40 && counts[1] > 40, "{target}: {counts:?}");
        }
        assert!(fx.context_words.len() > 100);
        let gold = fx.gold();
        assert_eq!(gold.changed.len(), 6);
        assert_eq!(gold.stable.len(), 5);
    }

    #[test]
    fn drifted_word_changes_topic() {
        let fx = drift_corpus(1, 10_000);
        let neighbors = |period| {
            fx.corpus
                .slice(period)
                .iter()
                .filter(|s| s.tokens.iter().any(|t| t == "leaf"))
                .flat_map(|s| {
                    s.tokens
                        .iter()
                        .filter(|t| t.chars().nth(1).is_some_and(|c| c.is_ascii_digit()))
                        .cloned()
                })
                .collect::<BTreeSet<_>>()
        };
        assert!(neighbors(Period::Earlier)
            .iter()
            .all(|t| t.starts_with("t0w")));
        assert!(neighbors(Period::Later)
            .iter()
            .all(|t| t.starts_with("t1w")));
    }

    #[test]
    fn blobs_are_deterministic() {
        let centers = separated_centers(3, 4, 5.0, 9);
        let (a, la) = gaussian_blobs(&centers, 20, 0.1, 1);
        let (b, lb) = gaussian_blobs(&centers, 20, 0.1, 1);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(a.len(), 60);
    }

    #[test]
    fn confusion_fixture_reproduces_counts() {
        use crate::detector::{evaluate, ChangeRanking, Confusion, MetricId, ThresholdPolicy};
        let (scores, gold) = confusion_fixture(39, 0, 2, 12);
        let ranking = ChangeRanking::build(
            "fixture",
            MetricId::Jsd,
            scores,
            ThresholdPolicy::Absolute(0.5),
        )
        .unwrap();
        assert_eq!(
            evaluate(&ranking.verdicts, &gold).unwrap(),
            Confusion::new(39, 0, 2, 12)
        );
    }
}
