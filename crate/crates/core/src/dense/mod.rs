//! Late-interaction (MaxSim) scoring over precomputed token embeddings.
//!
//! `maxsim(Q, D) = sum_i max_j (Q_i . D_j)`. Rows are unit vectors, so each
//! dot product is a cosine. Search is exact: every stored item is scored.

mod io;

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::rank::{sort_and_truncate, RankedList, ScoredCandidate, Stage};

pub use io::{load_embedding_store, read_binary, read_text, write_binary, write_text, MAGIC};

/// Allowed deviation of a row's L2 norm from 1.
pub const NORM_TOLERANCE: f32 = 1e-4;

#[derive(Debug, Error)]
pub enum DenseError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("item {item:?} row {row} has norm {norm}, not unit length")]
    NormError { item: String, row: usize, norm: f32 },
    #[error("embedding file: {0}")]
    Format(String),
    #[error("duplicate item id {0:?}")]
    DuplicateId(String),
    #[error("k must be at least 1")]
    InvalidDepth,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major matrix of token vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    dim: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self, DenseError> {
        if dim == 0 {
            return Err(DenseError::Format("dimension must be at least 1".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(DenseError::Format(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self, DenseError> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| DenseError::Format("matrix needs at least one row".into()))?;
        let mut data = Vec::with_capacity(dim * rows.len());
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(DenseError::DimMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Every row has unit norm within [`NORM_TOLERANCE`].
    pub fn check_unit_rows(&self, item: &str) -> Result<(), DenseError> {
        for (row, v) in self.iter_rows().enumerate() {
            let norm = dot(v, v).sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(DenseError::NormError {
                    item: item.to_string(),
                    row,
                    norm,
                });
            }
        }
        Ok(())
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sum over query rows of the best dot product with any document row.
///
/// An empty query scores 0; a query row contributes 0 against an empty
/// document.
pub fn maxsim(query: &Matrix, doc: &Matrix) -> Result<f64, DenseError> {
    if query.dim != doc.dim {
        return Err(DenseError::DimMismatch {
            expected: doc.dim,
            found: query.dim,
        });
    }
    Ok(maxsim_unchecked(query, doc))
}

fn maxsim_unchecked(query: &Matrix, doc: &Matrix) -> f64 {
    let mut total = 0.0f64;
    for q in query.iter_rows() {
        let best = doc
            .iter_rows()
            .map(|d| dot(q, d))
            .fold(f32::NEG_INFINITY, f32::max);
        if best.is_finite() {
            total += f64::from(best);
        }
    }
    total
}

/// Per-item token matrices sharing one dimension, every row unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    items: BTreeMap<String, Matrix>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            items: BTreeMap::new(),
        }
    }

    /// Add an item, validating dimension, row count and row norms.
    pub fn insert(&mut self, item_id: impl Into<String>, m: Matrix) -> Result<(), DenseError> {
        let item_id = item_id.into();
        if m.dim != self.dim {
            return Err(DenseError::DimMismatch {
                expected: self.dim,
                found: m.dim,
            });
        }
        if m.rows() == 0 {
            return Err(DenseError::Format(format!("item {item_id:?} has no token rows")));
        }
        m.check_unit_rows(&item_id)?;
        if self.items.contains_key(&item_id) {
            return Err(DenseError::DuplicateId(item_id));
        }
        self.items.insert(item_id, m);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&Matrix> {
        self.items.get(item_id)
    }

    /// Items in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.items.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Exact top-`k` by MaxSim against every stored item.
    pub fn search(&self, query: &Matrix, k: usize) -> Result<RankedList, DenseError> {
        if k == 0 {
            return Err(DenseError::InvalidDepth);
        }
        if self.items.is_empty() {
            return Ok(Vec::new());
        }
        if query.dim != self.dim {
            return Err(DenseError::DimMismatch {
                expected: self.dim,
                found: query.dim,
            });
        }
        let entries: Vec<(&String, &Matrix)> = self.items.iter().collect();
        let mut scored: RankedList = entries
            .par_iter()
            .map(|(id, m)| ScoredCandidate::new(id.as_str(), maxsim_unchecked(query, m), Stage::Dense))
            .collect();
        sort_and_truncate(&mut scored, k);
        Ok(scored)
    }
}

pub fn search_dense(query: &Matrix, store: &EmbeddingStore, k: usize) -> Result<RankedList, DenseError> {
    store.search(query, k)
}
