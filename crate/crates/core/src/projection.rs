//! Exact t-SNE into three dimensions, and paired projections of a word's
//! two period representations.

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Period;
use crate::detector::ModelArtifacts;

const OUTPUT_DIM: usize = 3;
const MIN_PROBABILITY: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectionError {
    #[error("perplexity {perplexity} is too high for {points} points (must be below {limit})")]
    PerplexityTooHigh {
        perplexity: f64,
        points: usize,
        limit: f64,
    },
    #[error("t-SNE needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("t-SNE needs at least {min} iterations, got {got}")]
    TooFewIterations { got: usize, min: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("input vectors must be finite")]
    NonFinite,
    #[error("input vectors have inconsistent dimensions")]
    DimensionMismatch,
}

/// t-SNE hyperparameters. `perplexity: None` means `min(30, (n − 1)/3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneParams {
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    /// Standard deviation of the Gaussian initialization.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: None,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            init_scale: 1e-4,
            seed: 0,
        }
    }
}

impl TsneParams {
    pub const MIN_ITERATIONS: usize = 250;

    /// The perplexity that will be used for `n` points.
    pub fn resolve_perplexity(&self, n: usize) -> Result<f64, ProjectionError> {
        let limit = (n as f64 - 1.0) / 3.0;
        match self.perplexity {
            None => Ok(30f64.min(limit)),
            Some(p) if !(p > 0.0 && p.is_finite()) => Err(ProjectionError::InvalidParams(format!(
                "perplexity must be positive, got {p}"
            ))),
            Some(p) if p >= limit => Err(ProjectionError::PerplexityTooHigh {
                perplexity: p,
                points: n,
                limit,
            }),
            Some(p) => Ok(p),
        }
    }

    fn validate(&self) -> Result<(), ProjectionError> {
        if self.iterations < Self::MIN_ITERATIONS {
            return Err(ProjectionError::TooFewIterations {
                got: self.iterations,
                min: Self::MIN_ITERATIONS,
            });
        }
        let positive = [
            ("learning_rate", self.learning_rate),
            ("early_exaggeration", self.early_exaggeration),
            ("init_scale", self.init_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ProjectionError::InvalidParams(format!(
                    "{name} must be positive"
                )));
            }
        }
        for (name, v) in [
            ("initial_momentum", self.initial_momentum),
            ("final_momentum", self.final_momentum),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(ProjectionError::InvalidParams(format!(
                    "{name} must be in [0, 1)"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneOutput {
    /// `n × 3`, mean-centered.
    pub coords: Array2<f64>,
    /// KL(P‖Q) after each iteration, against the unexaggerated P.
    pub kl_trace: Vec<f64>,
    /// Perplexity the affinities were calibrated to.
    pub perplexity: f64,
    pub warnings: Vec<String>,
}

fn squared_distances(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Row `i` of the conditional affinities `p_{j|i}` at precision `beta`,
/// and its Shannon entropy in nats.
fn conditional_row(distances: &[f64], i: usize, beta: f64, row: &mut [f64]) -> f64 {
    // Shift by the nearest neighbor so the largest weight is 1.
    let min = distances
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (&d, p)) in distances.iter().zip(row.iter_mut()).enumerate() {
        *p = if j == i {
            0.0
        } else {
            (-(d - min) * beta).exp()
        };
        sum += *p;
    }
    let mut entropy = 0.0;
    for p in row.iter_mut() {
        *p /= sum;
        if *p > 0.0 {
            entropy -= *p * p.ln();
        }
    }
    entropy
}

/// Symmetrized input affinities calibrated to `perplexity`. Rows whose
/// points all coincide get uniform affinities.
fn input_affinities(
    distances: &Array2<f64>,
    perplexity: f64,
    warnings: &mut Vec<String>,
) -> Array2<f64> {
    let n = distances.nrows();
    // A point with n − 1 neighbors cannot exceed perplexity n − 1, and the
    // target is never below one effective neighbor.
    let target = perplexity.clamp(1.0, (n - 1) as f64).ln();
    let mut p = Array2::zeros((n, n));
    let mut degenerate = 0;
    for i in 0..n {
        let row_d = distances.row(i).to_vec();
        let mut row = vec![0.0; n];
        let spread = row_d
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &d)| d)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
                (lo.min(d), hi.max(d))
            });
        if spread.1 - spread.0 <= 0.0 {
            // All neighbors equidistant: every beta gives the uniform row.
            conditional_row(&row_d, i, 0.0, &mut row);
            if spread.1 == 0.0 {
                degenerate += 1;
            }
        } else {
            let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
            for _ in 0..200 {
                let h = conditional_row(&row_d, i, beta, &mut row);
                let diff = h - target;
                if diff.abs() < 1e-10 {
                    break;
                }
                if diff > 0.0 {
                    lo = beta;
                    beta = if hi.is_finite() {
                        0.5 * (beta + hi)
                    } else {
                        beta * 2.0
                    };
                } else {
                    hi = beta;
                    beta = 0.5 * (beta + lo);
                }
            }
        }
        p.row_mut(i).assign(&ndarray::Array1::from(row));
    }
    if degenerate > 0 {
        let msg =
            format!("{degenerate} point(s) coincide with all others; using uniform affinities");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let sym = (&p + &p.t()) / (2.0 * n as f64);
    sym.mapv(|v| v.max(MIN_PROBABILITY))
}

/// Projects the rows of `x` (`n × d`) to three dimensions.
pub fn tsne3d(x: ArrayView2<'_, f64>, params: &TsneParams) -> Result<TsneOutput, ProjectionError> {
    params.validate()?;
    let n = x.nrows();
    if n < 2 {
        return Err(ProjectionError::TooFewPoints(n));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(ProjectionError::NonFinite);
    }
    let perplexity = params.resolve_perplexity(n)?;
    let mut warnings = Vec::new();
    let distances = squared_distances(x);
    let p = input_affinities(&distances, perplexity, &mut warnings);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, params.init_scale).expect("validated scale");
    let mut y = Array2::from_shape_fn((n, OUTPUT_DIM), |_| normal.sample(&mut rng));
    let mut update = Array2::<f64>::zeros((n, OUTPUT_DIM));
    let mut gains = Array2::<f64>::ones((n, OUTPUT_DIM));
    let mut num = Array2::<f64>::zeros((n, n));
    let mut grad = Array2::<f64>::zeros((n, OUTPUT_DIM));
    let mut kl_trace = Vec::with_capacity(params.iterations);

    for it in 0..params.iterations {
        let exaggeration = if it < params.exaggeration_iterations {
            params.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < params.momentum_switch {
            params.initial_momentum
        } else {
            params.final_momentum
        };

        // The optimizer restarts when exaggeration ends; carrying the
        // exaggerated momentum and gains over makes the final phase oscillate.
        if it == params.exaggeration_iterations {
            update.fill(0.0);
            gains.fill(1.0);
        }

        let mut total = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d: f64 = (0..OUTPUT_DIM)
                    .map(|k| (y[[i, k]] - y[[j, k]]).powi(2))
                    .sum();
                let v = 1.0 / (1.0 + d);
                num[[i, j]] = v;
                num[[j, i]] = v;
                total += 2.0 * v;
            }
        }

        grad.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[[i, j]] / total).max(MIN_PROBABILITY);
                let coeff = 4.0 * (exaggeration * p[[i, j]] - q) * num[[i, j]];
                for k in 0..OUTPUT_DIM {
                    grad[[i, k]] += coeff * (y[[i, k]] - y[[j, k]]);
                }
            }
        }

        for ((g, u), gain) in grad.iter().zip(update.iter_mut()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*u > 0.0) {
                *gain + 0.2
            } else {
                *gain * 0.8
            }
            .max(0.01);
            *u = momentum * *u - params.learning_rate * *gain * g;
        }
        y += &update;
        let mean = y.mean_axis(Axis(0)).expect("n >= 2");
        y -= &mean;

        let mut total = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d: f64 = (0..OUTPUT_DIM)
                    .map(|k| (y[[i, k]] - y[[j, k]]).powi(2))
                    .sum();
                let v = 1.0 / (1.0 + d);
                num[[i, j]] = v;
                total += 2.0 * v;
            }
        }
        let mut kl = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let q = (num[[i, j]] / total).max(MIN_PROBABILITY);
                let pij = p[[i, j]];
                kl += 2.0 * pij * (pij / q).ln();
            }
        }
        kl_trace.push(kl);
    }

    Ok(TsneOutput {
        coords: y,
        kl_trace,
        perplexity,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub word: String,
    pub period: String,
    pub xyz: [f64; 3],
}

/// Projected points with same-word links across periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub points: Vec<ProjectedPoint>,
    /// Index pairs into `points`: (earlier, later) of the same word.
    pub links: Vec<[usize; 2]>,
    pub kl_trace: Vec<f64>,
    /// Parameters as run, with the perplexity resolved.
    pub params: TsneParams,
    pub warnings: Vec<String>,
}

impl ProjectionResult {
    /// Euclidean length of each link, by word.
    pub fn link_lengths(&self) -> Vec<(String, f64)> {
        self.links
            .iter()
            .map(|&[a, b]| {
                let (p, q) = (&self.points[a], &self.points[b]);
                let len = p
                    .xyz
                    .iter()
                    .zip(&q.xyz)
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                (p.word.clone(), len)
            })
            .collect()
    }

    /// `word,period,x,y,z` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["word", "period", "x", "y", "z"])
            .and_then(|_| {
                self.points.iter().try_for_each(|p| {
                    let [x, y, z] = p.xyz.map(|v| v.to_string());
                    w.write_record([p.word.as_str(), &p.period, &x, &y, &z])
                })
            })
            .expect("writing to memory cannot fail");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("input is UTF-8")
    }
}

/// The two period labels and per-period vectors of `word` under a model.
/// Contextual models contribute the centroid of each occurrence cell.
fn period_vectors(artifacts: &ModelArtifacts<'_>, word: &str) -> [(String, Option<Vec<f64>>); 2] {
    match artifacts {
        ModelArtifacts::Aligned(pair) => {
            let v = pair.vectors(word);
            let [a, b] = pair.labels().clone();
            [
                (a, v.map(|(x, _)| x.to_vec())),
                (b, v.map(|(_, y)| y.to_vec())),
            ]
        }
        ModelArtifacts::Injected(wi) => Period::BOTH.map(|period| {
            let label = wi
                .tags
                .get(word)
                .and_then(|t| {
                    t.get(period)
                        .rsplit_once(wi.separator)
                        .map(|(_, l)| l.to_string())
                })
                .unwrap_or_else(|| period.to_string());
            (label, wi.vector(word, period).map(|v| v.to_vec()))
        }),
        ModelArtifacts::Contextual { store, embedder } => {
            let labels = store
                .periods()
                .unwrap_or_else(|| Period::BOTH.map(|p| p.to_string()));
            labels.map(|label| {
                let v = store
                    .get(word, *embedder, &label)
                    .and_then(|s| s.centroid());
                (label, v)
            })
        }
    }
}

/// Stacks both periods' vectors of `words`, runs t-SNE jointly and links
/// each word's two points. Words missing from a period contribute only
/// the points they have.
pub fn project_pair(
    artifacts: ModelArtifacts<'_>,
    words: &[String],
    params: &TsneParams,
) -> Result<ProjectionResult, ProjectionError> {
    let mut seen = std::collections::HashSet::new();
    let mut points = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut links = Vec::new();
    let mut warnings = Vec::new();
    for word in words.iter().filter(|w| seen.insert(w.as_str())) {
        let mut indices = Vec::new();
        for (label, vector) in period_vectors(&artifacts, word) {
            match vector {
                Some(v) => {
                    indices.push(points.len());
                    points.push(ProjectedPoint {
                        word: word.clone(),
                        period: label,
                        xyz: [0.0; 3],
                    });
                    rows.push(v);
                }
                None => warnings.push(format!("`{word}` has no vector in period {label}")),
            }
        }
        if let [a, b] = indices[..] {
            links.push([a, b]);
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let dim = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(ProjectionError::DimensionMismatch);
    }
    let x = Array2::from_shape_vec((rows.len(), dim), rows.concat())
        .map_err(|_| ProjectionError::DimensionMismatch)?;
    let out = tsne3d(x.view(), params)?;
    for (p, row) in points.iter_mut().zip(out.coords.rows()) {
        p.xyz = [row[0], row[1], row[2]];
    }
    warnings.extend(out.warnings);
    Ok(ProjectionResult {
        points,
        links,
        kl_trace: out.kl_trace,
        params: TsneParams {
            perplexity: Some(out.perplexity),
            ..params.clone()
        },
        warnings,
    })
}
