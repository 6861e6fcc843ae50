//! Change scores between two representations of the same word.
//!
//! Static scores compare one vector per period. Contextual scores compare
//! two sets of occurrence vectors: average pairwise distance, Jensen–Shannon
//! divergence over shared usage clusters, and the change in cluster count.

mod affinity;
mod contextual;
mod occurrences;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use affinity::{affinity_propagation, AffinityConfig, ClusterAssignment, Preference};
pub use contextual::{
    apd, cluster_count_change, jensen_shannon, jsd_change, ClusterScore, JSD_SMOOTHING,
};
pub use occurrences::{
    Embedder, Occurrence, OccurrenceFileError, OccurrenceSet, OccurrenceStore, OCCURRENCE_FORMAT,
    OCCURRENCE_VERSION,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("vector contains non-finite entries")]
    NonFinite,
    #[error("cosine distance is undefined for an all-zero vector")]
    ZeroVector,
    #[error("correlation distance is undefined for a constant vector")]
    ConstantVector,
    #[error("occurrence set is empty")]
    EmptySet,
    #[error("affinity propagation needs damping in [0.5, 1), got {0}")]
    InvalidDamping(f64),
}

/// How the Bray-Curtis score is aggregated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BrayCurtisForm {
    /// `Σ |aᵢ−bᵢ| / |aᵢ+bᵢ|`, one quotient per component.
    #[default]
    TermWise,
    /// `Σ |aᵢ−bᵢ| / Σ |aᵢ+bᵢ|`.
    Conventional,
}

/// The six static distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    Euclidean,
    Manhattan,
    Canberra,
    Cosine,
    BrayCurtis,
    Correlation,
}

impl Distance {
    pub const ALL: [Distance; 6] = [
        Distance::Euclidean,
        Distance::Manhattan,
        Distance::Canberra,
        Distance::Cosine,
        Distance::BrayCurtis,
        Distance::Correlation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Distance::Euclidean => "euclidean",
            Distance::Manhattan => "manhattan",
            Distance::Canberra => "canberra",
            Distance::Cosine => "cosine",
            Distance::BrayCurtis => "bray-curtis",
            Distance::Correlation => "correlation",
        }
    }

    pub fn compute(self, a: &[f64], b: &[f64], bray: BrayCurtisForm) -> Result<f64, MetricError> {
        let pair = VectorPair::new(a, b)?;
        Ok(match self {
            Distance::Euclidean => pair.euclidean(),
            Distance::Manhattan => pair.manhattan(),
            Distance::Canberra => pair.canberra(),
            Distance::Cosine => pair.cosine()?,
            Distance::BrayCurtis => pair.bray_curtis(bray),
            Distance::Correlation => pair.correlation()?,
        })
    }
}

/// Two same-word vectors from different periods, checked for equal
/// dimension and finite entries.
#[derive(Debug, Clone, Copy)]
pub struct VectorPair<'a> {
    a: &'a [f64],
    b: &'a [f64],
}

impl<'a> VectorPair<'a> {
    pub fn new(a: &'a [f64], b: &'a [f64]) -> Result<Self, MetricError> {
        if a.len() != b.len() {
            return Err(MetricError::DimensionMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        if !a.iter().chain(b).all(|v| v.is_finite()) {
            return Err(MetricError::NonFinite);
        }
        Ok(Self { a, b })
    }

    fn zip(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.a.iter().copied().zip(self.b.iter().copied())
    }

    pub fn euclidean(&self) -> f64 {
        self.zip()
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    pub fn manhattan(&self) -> f64 {
        self.zip().map(|(x, y)| (x - y).abs()).sum()
    }

    /// Components where both entries are zero contribute nothing.
    pub fn canberra(&self) -> f64 {
        self.zip()
            .map(|(x, y)| {
                let denom = x.abs() + y.abs();
                if denom == 0.0 {
                    0.0
                } else {
                    (x - y).abs() / denom
                }
            })
            .sum()
    }

    /// Equal components contribute zero. A component with `aᵢ = −bᵢ ≠ 0`
    /// has a zero denominator and makes the term-wise score infinite.
    pub fn bray_curtis(&self, form: BrayCurtisForm) -> f64 {
        match form {
            BrayCurtisForm::TermWise => self
                .zip()
                .map(|(x, y)| {
                    let num = (x - y).abs();
                    if num == 0.0 {
                        0.0
                    } else {
                        num / (x + y).abs()
                    }
                })
                .sum(),
            BrayCurtisForm::Conventional => {
                let num: f64 = self.zip().map(|(x, y)| (x - y).abs()).sum();
                let denom: f64 = self.zip().map(|(x, y)| (x + y).abs()).sum();
                if num == 0.0 {
                    0.0
                } else {
                    num / denom
                }
            }
        }
    }

    pub fn cosine(&self) -> Result<f64, MetricError> {
        cosine_of(self.a, self.b)
    }

    /// One minus the Pearson correlation.
    pub fn correlation(&self) -> Result<f64, MetricError> {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(self.a), mean(self.b));
        let ca: Vec<f64> = self.a.iter().map(|x| x - ma).collect();
        let cb: Vec<f64> = self.b.iter().map(|y| y - mb).collect();
        cosine_of(&ca, &cb).map_err(|_| MetricError::ConstantVector)
    }
}

fn cosine_of(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    Ok((1.0 - dot / (na * nb)).clamp(0.0, 2.0))
}

pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    Ok(VectorPair::new(a, b)?.euclidean())
}

pub fn manhattan(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    Ok(VectorPair::new(a, b)?.manhattan())
}

pub fn canberra(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    Ok(VectorPair::new(a, b)?.canberra())
}

pub fn cosine_dist(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    VectorPair::new(a, b)?.cosine()
}

pub fn bray_curtis(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    Ok(VectorPair::new(a, b)?.bray_curtis(BrayCurtisForm::TermWise))
}

pub fn correlation_dist(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    VectorPair::new(a, b)?.correlation()
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn pair(dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        let v = prop::collection::vec(-100.0f64..100.0, dim);
        (v.clone(), v)
    }

    proptest! {
        #[test]
        fn axioms_hold((a, b) in prop_oneof![pair(5), pair(100)]) {
            for d in Distance::ALL {
                let ab = d.compute(&a, &b, BrayCurtisForm::TermWise).unwrap();
                let ba = d.compute(&b, &a, BrayCurtisForm::TermWise).unwrap();
                prop_assert!(ab >= 0.0);
                prop_assert_eq!(ab, ba);
                prop_assert!(d.compute(&a, &a, BrayCurtisForm::TermWise).unwrap().abs() < 1e-12);
                if matches!(d, Distance::Cosine | Distance::Correlation) {
                    prop_assert!(ab <= 2.0);
                }
            }
        }
    }
}
