//! Affinity propagation (Frey & Dueck message passing).
//!
//! Similarities are negative squared Euclidean distances. Self-similarity
//! is the preference, by default the median of the off-diagonal
//! similarities. A tiny seeded perturbation breaks ties between equivalent
//! exemplars, so results are deterministic for a fixed input order.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::MetricError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preference {
    /// Median of the off-diagonal similarities.
    Median,
    /// Smallest off-diagonal similarity; yields few clusters.
    Minimum,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffinityConfig {
    pub damping: f64,
    pub max_iter: usize,
    /// Iterations the exemplar set must stay unchanged to count as converged.
    pub convergence_iter: usize,
    pub preference: Preference,
    pub seed: u64,
}

impl Default for AffinityConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            max_iter: 200,
            convergence_iter: 15,
            preference: Preference::Median,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Sorted point indices elected as exemplars.
    pub exemplars: Vec<usize>,
    /// Exemplar index of every point; exemplars label themselves.
    pub labels: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl ClusterAssignment {
    pub fn cluster_count(&self) -> usize {
        self.exemplars.len()
    }

    /// Position of point `i`'s exemplar within [`Self::exemplars`].
    pub fn cluster_of(&self, i: usize) -> usize {
        self.exemplars
            .binary_search(&self.labels[i])
            .expect("labels are exemplars")
    }

    fn single(n: usize, exemplar: usize, iterations: usize, converged: bool) -> Self {
        Self {
            exemplars: vec![exemplar],
            labels: vec![exemplar; n],
            iterations,
            converged,
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn similarity_matrix<P: AsRef<[f64]>>(points: &[P]) -> Result<Array2<f64>, MetricError> {
    let n = points.len();
    let dim = points[0].as_ref().len();
    for p in points {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(MetricError::DimensionMismatch {
                left: dim,
                right: p.len(),
            });
        }
        if !p.iter().all(|v| v.is_finite()) {
            return Err(MetricError::NonFinite);
        }
    }
    let mut s = Array2::zeros((n, n));
    for i in 0..n {
        for k in (i + 1)..n {
            let d: f64 = points[i]
                .as_ref()
                .iter()
                .zip(points[k].as_ref())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            s[[i, k]] = -d;
            s[[k, i]] = -d;
        }
    }
    Ok(s)
}

/// Clusters `points` by affinity propagation.
///
/// A single point is its own cluster. When every pair of points is equally
/// similar the message passing has no signal; the result is then one
/// cluster, or one cluster per point if the preference exceeds the
/// similarity.
pub fn affinity_propagation<P: AsRef<[f64]>>(
    points: &[P],
    config: &AffinityConfig,
) -> Result<ClusterAssignment, MetricError> {
    if !(0.5..1.0).contains(&config.damping) {
        return Err(MetricError::InvalidDamping(config.damping));
    }
    let n = points.len();
    if n == 0 {
        return Err(MetricError::EmptySet);
    }
    if n == 1 {
        return Ok(ClusterAssignment::single(1, 0, 0, true));
    }

    let mut s = similarity_matrix(points)?;
    let mut off_diagonal: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| (i, k)))
        .map(|(i, k)| s[[i, k]])
        .collect();
    let preference = match config.preference {
        Preference::Median => median(&mut off_diagonal),
        Preference::Minimum => off_diagonal.iter().copied().fold(f64::INFINITY, f64::min),
        Preference::Value(v) => v,
    };

    let first = off_diagonal[0];
    if off_diagonal.iter().all(|&v| v == first) {
        return Ok(if preference > first {
            ClusterAssignment {
                exemplars: (0..n).collect(),
                labels: (0..n).collect(),
                iterations: 0,
                converged: true,
            }
        } else {
            ClusterAssignment::single(n, 0, 0, true)
        });
    }

    for k in 0..n {
        s[[k, k]] = preference;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for v in s.iter_mut() {
        let jitter: f64 = StandardNormal.sample(&mut rng);
        *v += (f64::EPSILON * *v + f64::MIN_POSITIVE * 100.0) * jitter;
    }

    let damping = config.damping;
    let window = config.convergence_iter.max(1);
    let mut r = Array2::<f64>::zeros((n, n));
    let mut a = Array2::<f64>::zeros((n, n));
    let mut history = vec![vec![false; window]; n];
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..config.max_iter {
        iterations = it + 1;

        // Responsibilities.
        for i in 0..n {
            let (mut best, mut best_k, mut second) = (f64::NEG_INFINITY, 0, f64::NEG_INFINITY);
            for k in 0..n {
                let v = a[[i, k]] + s[[i, k]];
                if v > best {
                    second = best;
                    best = v;
                    best_k = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competitor = if k == best_k { second } else { best };
                let fresh = s[[i, k]] - competitor;
                r[[i, k]] = damping * r[[i, k]] + (1.0 - damping) * fresh;
            }
        }

        // Availabilities.
        for k in 0..n {
            let positive: f64 = (0..n)
                .map(|i| {
                    if i == k {
                        r[[k, k]]
                    } else {
                        r[[i, k]].max(0.0)
                    }
                })
                .sum();
            for i in 0..n {
                let fresh = if i == k {
                    positive - r[[k, k]]
                } else {
                    (positive - r[[i, k]].max(0.0)).min(0.0)
                };
                a[[i, k]] = damping * a[[i, k]] + (1.0 - damping) * fresh;
            }
        }

        let mut exemplar_count = 0;
        for (k, h) in history.iter_mut().enumerate() {
            let is_exemplar = a[[k, k]] + r[[k, k]] > 0.0;
            h[it % window] = is_exemplar;
            exemplar_count += usize::from(is_exemplar);
        }
        if it + 1 >= window {
            let stable = history
                .iter()
                .all(|h| h.iter().all(|&e| e) || h.iter().all(|&e| !e));
            if stable && exemplar_count > 0 {
                converged = true;
                break;
            }
        }
    }

    let mut exemplars: Vec<usize> = (0..n).filter(|&k| a[[k, k]] + r[[k, k]] > 0.0).collect();
    if exemplars.is_empty() {
        let best = (0..n)
            .max_by(|&x, &y| (a[[x, x]] + r[[x, x]]).total_cmp(&(a[[y, y]] + r[[y, y]])))
            .expect("n >= 2");
        log::warn!("affinity propagation found no exemplar; collapsing to one cluster");
        return Ok(ClusterAssignment::single(n, best, iterations, false));
    }
    if !converged {
        log::warn!("affinity propagation did not converge in {iterations} iterations");
    }

    let assign = |exemplars: &[usize]| -> Vec<usize> {
        (0..n)
            .map(|i| match exemplars.binary_search(&i) {
                Ok(pos) => pos,
                Err(_) => {
                    let mut best = 0;
                    for (pos, &e) in exemplars.iter().enumerate() {
                        if s[[i, e]] > s[[i, exemplars[best]]] {
                            best = pos;
                        }
                    }
                    best
                }
            })
            .collect()
    };

    // Refine: within each cluster, the member with the largest summed
    // similarity to the others becomes the exemplar.
    let clusters = assign(&exemplars);
    let mut refined: Vec<usize> = (0..exemplars.len())
        .map(|c| {
            let members: Vec<usize> = (0..n).filter(|&i| clusters[i] == c).collect();
            *members
                .iter()
                .max_by(|&&x, &&y| {
                    let score = |j: usize| members.iter().map(|&i| s[[i, j]]).sum::<f64>();
                    score(x).total_cmp(&score(y))
                })
                .expect("cluster contains its exemplar")
        })
        .collect();
    refined.sort_unstable();
    refined.dedup();
    exemplars = refined;

    let labels = assign(&exemplars)
        .into_iter()
        .map(|c| exemplars[c])
        .collect();
    Ok(ClusterAssignment {
        exemplars,
        labels,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{gaussian_blobs, separated_centers};

    #[test]
    fn identical_points_form_one_cluster() {
        let points = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        let out = affinity_propagation(&points, &AffinityConfig::default()).unwrap();
        assert_eq!(out.exemplars, vec![0]);
        assert_eq!(out.labels, vec![0, 0]);
    }

    #[test]
    fn zero_preference_makes_every_point_an_exemplar() {
        let points = vec![vec![0.0], vec![1.0], vec![1.5], vec![4.0], vec![4.2]];
        let cfg = AffinityConfig {
            preference: Preference::Value(0.0),
            ..AffinityConfig::default()
        };
        let out = affinity_propagation(&points, &cfg).unwrap();
        assert_eq!(out.exemplars, vec![0, 1, 2, 3, 4]);
        assert_eq!(out.labels, vec![0, 1, 2, 3, 4]);
        assert!(out.converged);
    }

    #[test]
    fn labels_are_exemplars_and_exemplars_self_label() {
        let centers = separated_centers(3, 2, 5.0, 1);
        let (points, _) = gaussian_blobs(&centers, 20, 0.1, 2);
        let out = affinity_propagation(&points, &AffinityConfig::default()).unwrap();
        for &l in &out.labels {
            assert!(out.exemplars.contains(&l));
        }
        for &e in &out.exemplars {
            assert_eq!(out.labels[e], e);
        }
    }

    #[test]
    fn recovers_three_blobs() {
        let centers = separated_centers(3, 2, 5.0, 4);
        let (points, truth) = gaussian_blobs(&centers, 20, 1.0, 5);
        let out = affinity_propagation(&points, &AffinityConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.cluster_count(), 3);
        for c in 0..3 {
            let members: Vec<usize> = (0..60).filter(|&i| truth[i] == c).collect();
            let first = out.labels[members[0]];
            assert!(members.iter().all(|&i| out.labels[i] == first));
        }
    }

    #[test]
    fn heavier_damping_settles_tight_blobs() {
        // At damping 0.5 the messages on very tight blobs oscillate.
        let centers = separated_centers(3, 2, 5.0, 4);
        let (points, _) = gaussian_blobs(&centers, 20, 0.1, 5);
        let loose = affinity_propagation(&points, &AffinityConfig::default()).unwrap();
        assert!(!loose.converged);
        let cfg = AffinityConfig {
            damping: 0.9,
            ..AffinityConfig::default()
        };
        let out = affinity_propagation(&points, &cfg).unwrap();
        assert!(out.converged);
        assert_eq!(out.cluster_count(), 3);
    }

    #[test]
    fn deterministic_for_same_input() {
        let centers = separated_centers(4, 3, 2.0, 8);
        let (points, _) = gaussian_blobs(&centers, 10, 1.0, 9);
        let a = affinity_propagation(&points, &AffinityConfig::default()).unwrap();
        let b = affinity_propagation(&points, &AffinityConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_input() {
        let empty: Vec<Vec<f64>> = Vec::new();
        assert_eq!(
            affinity_propagation(&empty, &AffinityConfig::default()),
            Err(MetricError::EmptySet)
        );
        let cfg = AffinityConfig {
            damping: 0.3,
            ..AffinityConfig::default()
        };
        assert!(matches!(
            affinity_propagation(&[vec![0.0], vec![1.0]], &cfg),
            Err(MetricError::InvalidDamping(_))
        ));
        assert!(matches!(
            affinity_propagation(&[vec![0.0], vec![1.0, 2.0]], &AffinityConfig::default()),
            Err(MetricError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_point() {
        let out = affinity_propagation(&[vec![3.0]], &AffinityConfig::default()).unwrap();
        assert_eq!(out.cluster_count(), 1);
    }
}
