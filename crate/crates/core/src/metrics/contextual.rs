use serde::{Deserialize, Serialize};

use super::{
    affinity_propagation, AffinityConfig, BrayCurtisForm, Distance, MetricError, OccurrenceSet,
};

/// Additive smoothing applied to cluster usage distributions before the
/// divergence is taken.
pub const JSD_SMOOTHING: f64 = 1e-10;

/// A clustering-based score plus whether every clustering it relied on converged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterScore {
    pub value: f64,
    pub converged: bool,
}

fn non_empty(set: &OccurrenceSet) -> Result<(), MetricError> {
    if set.items.is_empty() {
        Err(MetricError::EmptySet)
    } else {
        Ok(())
    }
}

/// Average pairwise distance: the mean of `|d(a, b)|` over every pair drawn
/// from the two sets.
pub fn apd(a: &OccurrenceSet, b: &OccurrenceSet, base: Distance) -> Result<f64, MetricError> {
    non_empty(a)?;
    non_empty(b)?;
    let mut total = 0.0;
    for x in &a.items {
        for y in &b.items {
            total += base
                .compute(&x.vector, &y.vector, BrayCurtisForm::TermWise)?
                .abs();
        }
    }
    Ok(total / (a.items.len() * b.items.len()) as f64)
}

fn kl_bits(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).log2())
        .sum()
}

/// Base-2 Jensen–Shannon divergence of two distributions over the same support.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * (kl_bits(p, &m) + kl_bits(q, &m))).clamp(0.0, 1.0)
}

fn usage_distribution(counts: &[usize], total: usize) -> Vec<f64> {
    let k = counts.len() as f64;
    let norm = 1.0 + k * JSD_SMOOTHING;
    counts
        .iter()
        .map(|&c| (c as f64 / total as f64 + JSD_SMOOTHING) / norm)
        .collect()
}

/// Clusters the pooled occurrences of both sets and compares how each
/// period's usages spread over the shared clusters.
pub fn jsd_change(
    a: &OccurrenceSet,
    b: &OccurrenceSet,
    config: &AffinityConfig,
) -> Result<ClusterScore, MetricError> {
    non_empty(a)?;
    non_empty(b)?;
    let pooled: Vec<&[f64]> = a.vectors().chain(b.vectors()).collect();
    let clustering = affinity_propagation(&pooled, config)?;
    let k = clustering.cluster_count();
    let mut counts = [vec![0usize; k], vec![0usize; k]];
    for i in 0..pooled.len() {
        let side = usize::from(i >= a.items.len());
        counts[side][clustering.cluster_of(i)] += 1;
    }
    let p = usage_distribution(&counts[0], a.items.len());
    let q = usage_distribution(&counts[1], b.items.len());
    Ok(ClusterScore {
        value: jensen_shannon(&p, &q),
        converged: clustering.converged,
    })
}

/// `|k_A − k_B| / max(k_A, k_B)` where `k` is the number of exemplars found
/// when each set is clustered on its own.
pub fn cluster_count_change(
    a: &OccurrenceSet,
    b: &OccurrenceSet,
    config: &AffinityConfig,
) -> Result<ClusterScore, MetricError> {
    non_empty(a)?;
    non_empty(b)?;
    let ca = affinity_propagation(&a.vectors().collect::<Vec<_>>(), config)?;
    let cb = affinity_propagation(&b.vectors().collect::<Vec<_>>(), config)?;
    let (ka, kb) = (ca.cluster_count() as f64, cb.cluster_count() as f64);
    Ok(ClusterScore {
        value: (ka - kb).abs() / ka.max(kb),
        converged: ca.converged && cb.converged,
    })
}
