//! Orthogonal Procrustes alignment of two embedding spaces.
//!
//! The earlier model is rotated onto the later one: with `A` and `B` the
//! shared-vocabulary rows of each model, `Ω = UVᵀ` where `UΣVᵀ = svd(BᵀA)`,
//! and the aligned earlier matrix is `AΩᵀ`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sgns::EmbeddingModel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignError {
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("the two models share no vocabulary")]
    EmptyIntersection,
    #[error("matrices must have the same shape, got {left:?} and {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("singular value decomposition did not converge")]
    Svd,
}

/// Optional preprocessing of the shared rows, applied to both models
/// before the rotation is fitted: length normalization first, then
/// mean-centering.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignOptions {
    pub normalize: bool,
    pub center: bool,
}

/// Two models expressed in the later model's coordinate system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "AlignedPairData", into = "AlignedPairData")]
pub struct AlignedPair {
    shared_vocab: Vec<String>,
    index: HashMap<String, usize>,
    a_aligned: Array2<f64>,
    b: Array2<f64>,
    omega: Array2<f64>,
    residual: f64,
    options: AlignOptions,
    labels: [String; 2],
}

#[derive(Serialize, Deserialize)]
struct AlignedPairData {
    shared_vocab: Vec<String>,
    a_aligned: Array2<f64>,
    b: Array2<f64>,
    omega: Array2<f64>,
    residual: f64,
    options: AlignOptions,
    labels: [String; 2],
}

impl From<AlignedPairData> for AlignedPair {
    fn from(d: AlignedPairData) -> Self {
        AlignedPair::from_parts(
            d.shared_vocab,
            d.a_aligned,
            d.b,
            d.omega,
            d.residual,
            d.options,
            d.labels,
        )
    }
}

impl From<AlignedPair> for AlignedPairData {
    fn from(p: AlignedPair) -> Self {
        AlignedPairData {
            shared_vocab: p.shared_vocab,
            a_aligned: p.a_aligned,
            b: p.b,
            omega: p.omega,
            residual: p.residual,
            options: p.options,
            labels: p.labels,
        }
    }
}

impl AlignedPair {
    /// Reassembles a pair from stored parts. Row `i` of both matrices
    /// belongs to `shared_vocab[i]`.
    pub fn from_parts(
        shared_vocab: Vec<String>,
        a_aligned: Array2<f64>,
        b: Array2<f64>,
        omega: Array2<f64>,
        residual: f64,
        options: AlignOptions,
        labels: [String; 2],
    ) -> Self {
        let index = shared_vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self {
            shared_vocab,
            index,
            a_aligned,
            b,
            omega,
            residual,
            options,
            labels,
        }
    }

    pub fn shared_vocab(&self) -> &[String] {
        &self.shared_vocab
    }

    /// Earlier-slice vectors after rotation.
    pub fn a_aligned(&self) -> ArrayView2<'_, f64> {
        self.a_aligned.view()
    }

    /// Later-slice vectors (the reference frame).
    pub fn b(&self) -> ArrayView2<'_, f64> {
        self.b.view()
    }

    pub fn omega(&self) -> ArrayView2<'_, f64> {
        self.omega.view()
    }

    /// `‖AΩᵀ − B‖_F` over the shared rows.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn options(&self) -> AlignOptions {
        self.options
    }

    /// Slice labels of the earlier and later model.
    pub fn labels(&self) -> &[String; 2] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// The (earlier aligned, later) vectors of `word`.
    pub fn vectors(&self, word: &str) -> Option<(ArrayView1<'_, f64>, ArrayView1<'_, f64>)> {
        let &i = self.index.get(word)?;
        Some((self.a_aligned.row(i), self.b.row(i)))
    }
}

/// `‖ΩᵀΩ − I‖_F`.
pub fn orthogonality_check(omega: ArrayView2<'_, f64>) -> f64 {
    let gram = omega.t().dot(&omega);
    gram.indexed_iter()
        .map(|((i, j), &v)| {
            let target = if i == j { 1.0 } else { 0.0 };
            (v - target).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

fn frobenius(m: ArrayView2<'_, f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Fits the rotation for row-paired matrices `a` and `b` and returns
/// `(Ω, ‖aΩᵀ − b‖_F)`.
pub fn procrustes_matrices(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, f64), AlignError> {
    if a.dim() != b.dim() {
        return Err(AlignError::ShapeMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let d = a.ncols();
    let m = b.t().dot(&a);
    let m = DMatrix::from_fn(d, d, |i, j| m[[i, j]]);
    let svd = m
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or(AlignError::Svd)?;
    let (u, v_t) = (
        svd.u.ok_or(AlignError::Svd)?,
        svd.v_t.ok_or(AlignError::Svd)?,
    );
    let omega_n = u * v_t;
    let omega = Array2::from_shape_fn((d, d), |(i, j)| omega_n[(i, j)]);
    let residual = frobenius((a.dot(&omega.t()) - b).view());
    Ok((omega, residual))
}

fn preprocess(m: &mut Array2<f64>, options: AlignOptions) {
    if options.normalize {
        for mut row in m.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row /= norm;
            }
        }
    }
    if options.center {
        if let Some(mean) = m.mean_axis(Axis(0)) {
            *m -= &mean;
        }
    }
}

/// Words present in both models, by descending joint frequency, ties
/// broken lexicographically.
pub fn shared_vocabulary(a: &EmbeddingModel, b: &EmbeddingModel) -> Vec<String> {
    let mut shared: Vec<(u64, &str)> = a
        .vocabulary
        .entries()
        .iter()
        .filter_map(|e| {
            let other = b.vocabulary.id(&e.token)?;
            Some((
                e.total() + b.vocabulary.entry(other).total(),
                e.token.as_str(),
            ))
        })
        .collect();
    shared.sort_by(|x, y| y.0.cmp(&x.0).then_with(|| x.1.cmp(y.1)));
    shared.into_iter().map(|(_, w)| w.to_string()).collect()
}

/// Rotates the earlier model `a` onto the later model `b`.
pub fn procrustes(
    a: &EmbeddingModel,
    b: &EmbeddingModel,
    options: AlignOptions,
) -> Result<AlignedPair, AlignError> {
    if a.dim() != b.dim() {
        return Err(AlignError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let shared = shared_vocabulary(a, b);
    if shared.is_empty() {
        return Err(AlignError::EmptyIntersection);
    }
    if shared.len() < a.dim() {
        log::warn!(
            "only {} shared words for {} dimensions; the rotation is under-determined",
            shared.len(),
            a.dim()
        );
    }
    let rows = |model: &EmbeddingModel| {
        let ids: Vec<usize> = shared
            .iter()
            .map(|w| model.vocabulary.id(w).expect("word is shared"))
            .collect();
        model.vectors.select(Axis(0), &ids)
    };
    let (mut a_s, mut b_s) = (rows(a), rows(b));
    preprocess(&mut a_s, options);
    preprocess(&mut b_s, options);
    let (omega, residual) = procrustes_matrices(a_s.view(), b_s.view())?;
    let a_aligned = a_s.dot(&omega.t());
    Ok(AlignedPair::from_parts(
        shared,
        a_aligned,
        b_s,
        omega,
        residual,
        options,
        [a.provenance.clone(), b.provenance.clone()],
    ))
}
