//! Skip-gram with negative sampling, trained from scratch.
//!
//! Follows the reference word2vec recipe: input vectors uniform in
//! `[-0.5/d, 0.5/d]`, output vectors zeroed, a dynamic window whose radius
//! is drawn from `1..=window` per center token, and a learning rate that
//! decays linearly from `alpha` to `min_alpha` over all center tokens of all
//! epochs. There is no frequency subsampling.
//!
//! With `threads > 1` workers share the weight matrices and update them
//! without locks (Hogwild). With one worker the result is bitwise
//! reproducible for a given seed.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    inject_words, CorpusError, MissingTarget, Period, Sentence, TagPair, TimeSlicedCorpus,
    Vocabulary,
};

#[derive(Debug, Error)]
pub enum SgnsError {
    #[error("training stream contains no tokens")]
    EmptyStream,
    #[error("vocabulary has {0} word(s); negative sampling needs at least 2")]
    DegenerateVocabulary(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Training hyperparameters. Defaults are the reference settings
/// (min_count 1, 100 dimensions, window 5, alpha 0.025, 5 negatives,
/// exponent 1, 5 epochs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgnsConfig {
    pub min_count: u64,
    pub vector_size: usize,
    pub window: usize,
    pub alpha: f64,
    pub negative: usize,
    pub ns_exponent: f64,
    pub epochs: usize,
    pub seed: u64,
    pub min_alpha: f64,
    pub threads: usize,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        Self {
            min_count: 1,
            vector_size: 100,
            window: 5,
            alpha: 0.025,
            negative: 5,
            ns_exponent: 1.0,
            epochs: 5,
            seed: 1,
            min_alpha: 1e-4,
            threads: 1,
        }
    }
}

impl SgnsConfig {
    pub fn validate(&self) -> Result<(), SgnsError> {
        let bad = |msg: &str| Err(SgnsError::InvalidConfig(msg.to_string()));
        if self.vector_size == 0 {
            return bad("vector_size must be at least 1");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.min_alpha >= 0.0 && self.min_alpha <= self.alpha) {
            return bad("min_alpha must lie in [0, alpha]");
        }
        if self.negative == 0 {
            return bad("negative must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !self.ns_exponent.is_finite() {
            return bad("ns_exponent must be finite");
        }
        Ok(())
    }

    /// True when training is bitwise reproducible.
    pub fn is_deterministic(&self) -> bool {
        self.threads <= 1
    }
}

/// Static word vectors (the input/center vectors) with training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub vocabulary: Vocabulary,
    /// `|V| × d`, row `i` belongs to vocabulary id `i`.
    pub vectors: Array2<f64>,
    pub config: SgnsConfig,
    pub provenance: String,
    /// Mean loss per positive pair, one entry per epoch.
    pub epoch_losses: Vec<f64>,
}

impl EmbeddingModel {
    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn vector(&self, word: &str) -> Option<ArrayView1<'_, f64>> {
        self.vocabulary.id(word).map(|id| self.vectors.row(id))
    }

    pub fn cosine_similarity(&self, a: &str, b: &str) -> Option<f64> {
        let (a, b) = (self.vector(a)?, self.vector(b)?);
        Some(a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt()))
    }
}

/// Noise distribution proportional to `count^exponent`.
#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    alias: WeightedAliasIndex<f64>,
    probabilities: Vec<f64>,
}

impl NoiseDistribution {
    pub fn new(counts: &[u64], exponent: f64) -> Result<Self, SgnsError> {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(exponent)).collect();
        let total: f64 = weights.iter().sum();
        if counts.len() < 2 || !(total > 0.0 && total.is_finite()) {
            return Err(SgnsError::DegenerateVocabulary(counts.len()));
        }
        let probabilities = weights.iter().map(|w| w / total).collect();
        let alias = WeightedAliasIndex::new(weights)
            .map_err(|e| SgnsError::InvalidConfig(format!("noise distribution: {e}")))?;
        Ok(Self {
            alias,
            probabilities,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.alias.sample(rng)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }
}

/// f64 matrix shared between workers; relaxed atomics make racy updates well-defined.
struct SharedMatrix {
    data: Vec<AtomicU64>,
    dim: usize,
}

impl SharedMatrix {
    fn from_values(values: impl Iterator<Item = f64>, dim: usize) -> Self {
        Self {
            data: values.map(|v| AtomicU64::new(v.to_bits())).collect(),
            dim,
        }
    }

    fn read_row(&self, row: usize, out: &mut [f64]) {
        let base = row * self.dim;
        for (o, cell) in out.iter_mut().zip(&self.data[base..base + self.dim]) {
            *o = f64::from_bits(cell.load(Ordering::Relaxed));
        }
    }

    fn write_row(&self, row: usize, values: &[f64]) {
        let base = row * self.dim;
        for (v, cell) in values.iter().zip(&self.data[base..base + self.dim]) {
            cell.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_array(self, rows: usize) -> Array2<f64> {
        let values = self
            .data
            .into_iter()
            .map(|c| f64::from_bits(c.into_inner()))
            .collect();
        Array2::from_shape_vec((rows, self.dim), values).expect("shape matches buffer")
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `-ln σ(x)`, stable for large |x|.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Trainer<'a> {
    config: &'a SgnsConfig,
    noise: NoiseDistribution,
    input: SharedMatrix,
    output: SharedMatrix,
    processed: AtomicU64,
    planned: f64,
}

#[derive(Default)]
struct WorkerStats {
    loss: f64,
    pairs: u64,
}

impl Trainer<'_> {
    fn learning_rate(&self) -> f64 {
        let cfg = self.config;
        let progress = self.processed.load(Ordering::Relaxed) as f64 / self.planned;
        (cfg.alpha - (cfg.alpha - cfg.min_alpha) * progress).max(cfg.min_alpha)
    }

    fn run_shard(&self, sentences: &[Vec<u32>], rng: &mut ChaCha8Rng) -> WorkerStats {
        let d = self.config.vector_size;
        let window = self.config.window;
        let mut center = vec![0.0; d];
        let mut target = vec![0.0; d];
        let mut center_grad = vec![0.0; d];
        let mut stats = WorkerStats::default();

        for sentence in sentences {
            for (pos, &word) in sentence.iter().enumerate() {
                let alpha = self.learning_rate();
                let radius = window - rng.random_range(0..window);
                let lo = pos.saturating_sub(radius);
                let hi = (pos + radius).min(sentence.len() - 1);
                for (ctx_pos, &context) in sentence.iter().enumerate().take(hi + 1).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    self.input.read_row(word as usize, &mut center);
                    center_grad.iter_mut().for_each(|g| *g = 0.0);
                    for k in 0..=self.config.negative {
                        let (row, label) = if k == 0 {
                            (context as usize, 1.0)
                        } else {
                            let sampled = self.noise.sample(rng);
                            if sampled == context as usize {
                                continue;
                            }
                            (sampled, 0.0)
                        };
                        self.output.read_row(row, &mut target);
                        let f = dot(&center, &target);
                        stats.loss += if label > 0.0 {
                            neg_log_sigmoid(f)
                        } else {
                            neg_log_sigmoid(-f)
                        };
                        let g = (label - sigmoid(f)) * alpha;
                        for ((cg, t), c) in
                            center_grad.iter_mut().zip(target.iter_mut()).zip(&center)
                        {
                            *cg += g * *t;
                            *t += g * c;
                        }
                        self.output.write_row(row, &target);
                    }
                    for (c, g) in center.iter_mut().zip(&center_grad) {
                        *c += g;
                    }
                    self.input.write_row(word as usize, &center);
                    stats.pairs += 1;
                }
                self.processed.fetch_add(1, Ordering::Relaxed);
            }
        }
        stats
    }
}

fn worker_seed(seed: u64, epoch: usize, worker: usize) -> u64 {
    seed ^ ((epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        ^ ((worker as u64 + 1).wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
}

/// Trains a model over `stream`. Provenance defaults to `"stream"`.
pub fn train(stream: &[Sentence], config: &SgnsConfig) -> Result<EmbeddingModel, SgnsError> {
    config.validate()?;
    if stream.iter().all(|s| s.tokens.is_empty()) {
        return Err(SgnsError::EmptyStream);
    }
    let vocabulary = Vocabulary::from_sentences(stream, config.min_count);
    if vocabulary.len() < 2 {
        return Err(SgnsError::DegenerateVocabulary(vocabulary.len()));
    }
    let encoded: Vec<Vec<u32>> = stream
        .iter()
        .map(|s| {
            s.tokens
                .iter()
                .filter_map(|t| vocabulary.id(t).map(|id| id as u32))
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect();
    let total_tokens: u64 = encoded.iter().map(|s| s.len() as u64).sum();

    let counts: Vec<u64> = vocabulary.entries().iter().map(|e| e.total()).collect();
    let noise = NoiseDistribution::new(&counts, config.ns_exponent)?;

    let d = config.vector_size;
    let n = vocabulary.len();
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = 0.5 / d as f64;
    let input =
        SharedMatrix::from_values((0..n * d).map(|_| init_rng.random_range(-bound..bound)), d);
    let output = SharedMatrix::from_values(std::iter::repeat_n(0.0, n * d), d);

    let trainer = Trainer {
        config,
        noise,
        input,
        output,
        processed: AtomicU64::new(0),
        planned: (config.epochs as u64 * total_tokens).max(1) as f64,
    };

    let workers = config.threads.clamp(1, encoded.len());
    let shard_len = encoded.len().div_ceil(workers);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let stats: Vec<WorkerStats> = if workers == 1 {
            let mut rng = ChaCha8Rng::seed_from_u64(worker_seed(config.seed, epoch, 0));
            vec![trainer.run_shard(&encoded, &mut rng)]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = encoded
                    .chunks(shard_len)
                    .enumerate()
                    .map(|(w, shard)| {
                        let trainer = &trainer;
                        scope.spawn(move || {
                            let mut rng =
                                ChaCha8Rng::seed_from_u64(worker_seed(config.seed, epoch, w));
                            trainer.run_shard(shard, &mut rng)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("training worker panicked"))
                    .collect()
            })
        };
        let loss: f64 = stats.iter().map(|s| s.loss).sum();
        let pairs: u64 = stats.iter().map(|s| s.pairs).sum();
        let mean = if pairs == 0 { 0.0 } else { loss / pairs as f64 };
        log::debug!("epoch {}: mean loss {mean:.5}", epoch + 1);
        epoch_losses.push(mean);
    }

    Ok(EmbeddingModel {
        vectors: trainer.input.into_array(n),
        vocabulary,
        config: config.clone(),
        provenance: "stream".to_string(),
        epoch_losses,
    })
}

/// Trains one model per slice, each labeled with its slice label.
pub fn train_op_pair(
    corpus: &TimeSlicedCorpus,
    config: &SgnsConfig,
) -> Result<(EmbeddingModel, EmbeddingModel), SgnsError> {
    let fit = |period: Period| {
        train(corpus.slice(period), config).map(|mut m| {
            m.provenance = corpus.label(period).to_string();
            m
        })
    };
    let (earlier, later) = std::thread::scope(|scope| {
        let handle = scope.spawn(|| fit(Period::Earlier));
        let later = fit(Period::Later);
        (handle.join().expect("training thread panicked"), later)
    });
    Ok((earlier?, later?))
}

/// A single model trained on the word-injected stream.
#[derive(Debug, Clone, PartialEq)]
pub struct WiModel {
    pub model: EmbeddingModel,
    pub tags: BTreeMap<String, TagPair>,
    pub missing: Vec<MissingTarget>,
    pub separator: char,
}

impl WiModel {
    /// Vector of `word` as used in `period`, if the word was injected.
    pub fn vector(&self, word: &str, period: Period) -> Option<ArrayView1<'_, f64>> {
        self.model.vector(self.tags.get(word)?.get(period))
    }
}

pub fn train_wi(
    corpus: &TimeSlicedCorpus,
    targets: &BTreeSet<String>,
    separator: char,
    config: &SgnsConfig,
) -> Result<WiModel, SgnsError> {
    let injection = inject_words(corpus, targets, separator)?;
    let mut model = train(&injection.stream, config)?;
    model.provenance = "word-injected".to_string();
    Ok(WiModel {
        model,
        tags: injection.tags,
        missing: injection.missing,
        separator: injection.separator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DEFAULT_TAG_SEPARATOR;

    fn sentence(words: &str) -> Sentence {
        Sentence {
            doc_id: "d".into(),
            index: 0,
            tokens: words.split_whitespace().map(String::from).collect(),
            period: Period::Earlier,
        }
    }

    fn small_config() -> SgnsConfig {
        SgnsConfig {
            vector_size: 16,
            epochs: 3,
            ..SgnsConfig::default()
        }
    }

    #[test]
    fn defaults_match_reference_settings() {
        let c = SgnsConfig::default();
        assert_eq!(
            (c.min_count, c.vector_size, c.window, c.negative, c.epochs),
            (1, 100, 5, 5, 5)
        );
        assert_eq!(c.alpha, 0.025);
        assert_eq!(c.ns_exponent, 1.0);
    }

    #[test]
    fn default_config_gives_100_dim_rows() {
        let stream = vec![sentence("the leaf fell from the tree"); 20];
        let model = train(&stream, &SgnsConfig::default()).unwrap();
        assert_eq!(model.dim(), 100);
        assert_eq!(model.len(), 5);
        assert_eq!(model.epoch_losses.len(), 5);
    }

    #[test]
    fn empty_and_degenerate_streams() {
        assert!(matches!(
            train(&[], &small_config()),
            Err(SgnsError::EmptyStream)
        ));
        let one_word = vec![sentence("leaf leaf leaf")];
        assert!(matches!(
            train(&one_word, &small_config()),
            Err(SgnsError::DegenerateVocabulary(1))
        ));
    }

    #[test]
    fn invalid_config_rejected() {
        let stream = vec![sentence("a b c")];
        for cfg in [
            SgnsConfig {
                vector_size: 0,
                ..small_config()
            },
            SgnsConfig {
                window: 0,
                ..small_config()
            },
            SgnsConfig {
                alpha: 0.0,
                ..small_config()
            },
            SgnsConfig {
                negative: 0,
                ..small_config()
            },
            SgnsConfig {
                epochs: 0,
                ..small_config()
            },
        ] {
            assert!(matches!(
                train(&stream, &cfg),
                Err(SgnsError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn deterministic_mode_is_bitwise_reproducible() {
        let stream = vec![sentence("the quick brown fox jumps over the lazy dog"); 50];
        let a = train(&stream, &small_config()).unwrap();
        let b = train(&stream, &small_config()).unwrap();
        assert_eq!(a.vectors, b.vectors);
        assert_eq!(a.epoch_losses, b.epoch_losses);
        let c = train(
            &stream,
            &SgnsConfig {
                seed: 2,
                ..small_config()
            },
        )
        .unwrap();
        assert_ne!(a.vectors, c.vectors);
    }

    #[test]
    fn multithreaded_training_produces_finite_vectors() {
        let stream: Vec<Sentence> = (0..200)
            .map(|i| {
                sentence(if i % 2 == 0 {
                    "a b c d e f"
                } else {
                    "f e d c b a g"
                })
            })
            .collect();
        let model = train(
            &stream,
            &SgnsConfig {
                threads: 4,
                ..small_config()
            },
        )
        .unwrap();
        assert!(model.vectors.iter().all(|v| v.is_finite()));
        for row in model.vectors.rows() {
            assert!(row.dot(&row) > 0.0);
        }
    }

    #[test]
    fn vectors_finite_and_nonzero() {
        let stream = vec![sentence("one two three four five six"); 30];
        let model = train(&stream, &small_config()).unwrap();
        for row in model.vectors.rows() {
            assert!(row.iter().all(|v| v.is_finite()));
            assert!(row.dot(&row) > 0.0);
        }
    }

    #[test]
    fn noise_distribution_matches_unigram_frequencies() {
        let counts = [50u64, 20, 15, 10, 5];
        let noise = NoiseDistribution::new(&counts, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut hits = [0u64; 5];
        let draws = 1_000_000;
        for _ in 0..draws {
            hits[noise.sample(&mut rng)] += 1;
        }
        let total: u64 = counts.iter().sum();
        for (c, h) in counts.iter().zip(hits) {
            let expected = *c as f64 / total as f64;
            let observed = h as f64 / draws as f64;
            assert!(
                (observed - expected).abs() <= 0.02 * expected,
                "{observed} vs {expected}"
            );
        }
    }

    #[test]
    fn noise_exponent_flattens_distribution() {
        let noise = NoiseDistribution::new(&[100, 1], 0.0).unwrap();
        assert_eq!(noise.probabilities(), &[0.5, 0.5]);
        let noise = NoiseDistribution::new(&[81, 1], 0.5).unwrap();
        assert!((noise.probabilities()[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn op_pair_identical_slices_give_equal_models() {
        let lists: Vec<Vec<String>> = (0..40)
            .map(|i| {
                format!("w{} the leaf fell w{}", i % 5, (i + 2) % 7)
                    .split(' ')
                    .map(String::from)
                    .collect()
            })
            .collect();
        let corpus =
            TimeSlicedCorpus::from_token_lists(["pre1900", "post1900"], lists.clone(), lists)
                .unwrap();
        let (a, b) = train_op_pair(&corpus, &small_config()).unwrap();
        assert_eq!(a.provenance, "pre1900");
        assert_eq!(b.provenance, "post1900");
        assert_eq!(a.vectors, b.vectors);
        assert!(a.vocabulary.tokens().eq(b.vocabulary.tokens()));
    }

    #[test]
    fn wi_vocabulary_holds_tagged_targets() {
        let a: Vec<Vec<String>> = vec!["the leaf fell".split(' ').map(String::from).collect(); 10];
        let b: Vec<Vec<String>> =
            vec!["the leaf turned".split(' ').map(String::from).collect(); 10];
        let corpus = TimeSlicedCorpus::from_token_lists(["A", "B"], a, b).unwrap();
        let targets = BTreeSet::from(["leaf".to_string()]);
        let wi = train_wi(&corpus, &targets, DEFAULT_TAG_SEPARATOR, &small_config()).unwrap();
        let vocab = &wi.model.vocabulary;
        assert!(vocab.contains("leaf⊕A"));
        assert!(vocab.contains("leaf⊕B"));
        assert!(!vocab.contains("leaf"));
        assert!(wi.vector("leaf", Period::Later).is_some());
        assert_eq!(wi.model.provenance, "word-injected");
    }

    #[test]
    fn wi_without_targets_equals_plain_training() {
        let a: Vec<Vec<String>> = vec!["x y z".split(' ').map(String::from).collect(); 10];
        let b: Vec<Vec<String>> = vec!["z y w".split(' ').map(String::from).collect(); 10];
        let corpus = TimeSlicedCorpus::from_token_lists(["A", "B"], a, b).unwrap();
        let wi = train_wi(
            &corpus,
            &BTreeSet::new(),
            DEFAULT_TAG_SEPARATOR,
            &small_config(),
        )
        .unwrap();
        let stream: Vec<Sentence> = corpus.sentences().cloned().collect();
        let plain = train(&stream, &small_config()).unwrap();
        assert_eq!(wi.model.vectors, plain.vectors);
    }
}
