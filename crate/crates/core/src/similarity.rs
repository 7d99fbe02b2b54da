//! Dense embedding containers and the base pairwise similarity kernels.
//!
//! Every kernel returns a score where larger means more similar. Cosine is the
//! default; the distance-based kinds map a distance `D` to `1 / (1 + D)`.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One embedded object: an identifier, its optional source text and its vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub vector: Vec<f64>,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, vector: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            text: None,
            vector,
        }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }
}

/// An ordered collection of records sharing one dimension, with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingSet {
    records: Vec<EmbeddingRecord>,
    dimension: usize,
}

impl EmbeddingSet {
    /// Validates ids, dimensions and finiteness. An empty input yields an empty set of dimension 0.
    pub fn from_records(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut set = EmbeddingSet {
            records: Vec::with_capacity(records.len()),
            dimension: 0,
        };
        let mut seen = HashSet::with_capacity(records.len());
        for record in records {
            if !seen.insert(record.id.clone()) {
                return Err(Error::input(format!("duplicate id {:?}", record.id)));
            }
            set.push_unchecked_id(record)?;
        }
        Ok(set)
    }

    /// Builds a set from bare vectors, naming records by their position.
    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_records(
            vectors
                .into_iter()
                .enumerate()
                .map(|(i, v)| EmbeddingRecord::new(i.to_string(), v))
                .collect(),
        )
    }

    pub fn push(&mut self, record: EmbeddingRecord) -> Result<()> {
        if self.records.iter().any(|r| r.id == record.id) {
            return Err(Error::input(format!("duplicate id {:?}", record.id)));
        }
        self.push_unchecked_id(record)
    }

    fn push_unchecked_id(&mut self, record: EmbeddingRecord) -> Result<()> {
        let d = record.vector.len();
        if d == 0 {
            return Err(Error::input(format!("record {:?} has an empty vector", record.id)));
        }
        if self.records.is_empty() {
            self.dimension = d;
        } else if d != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: d,
            });
        }
        if record.vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::input(format!(
                "record {:?} contains a non-finite value",
                record.id
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn get(&self, index: usize) -> Option<&EmbeddingRecord> {
        self.records.get(index)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EmbeddingRecord> {
        self.records.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }

    /// The records at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let records = indices
            .iter()
            .map(|&i| {
                self.records
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::input(format!("index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_records(records)
    }

    /// Applies `f` to every vector, keeping ids and texts.
    pub fn map_vectors<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        Self::from_records(
            self.records
                .iter()
                .map(|r| EmbeddingRecord {
                    id: r.id.clone(),
                    text: r.text.clone(),
                    vector: f(&r.vector),
                })
                .collect(),
        )
    }

    pub fn into_records(self) -> Vec<EmbeddingRecord> {
        self.records
    }
}

impl<'a> IntoIterator for &'a EmbeddingSet {
    type Item = &'a EmbeddingRecord;
    type IntoIter = std::slice::Iter<'a, EmbeddingRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

/// Base similarity kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityKind {
    #[default]
    Cosine,
    #[serde(alias = "euclidean-similarity")]
    Euclidean,
    #[serde(alias = "manhattan-similarity")]
    Manhattan,
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimilarityKind::Cosine => "cosine",
            SimilarityKind::Euclidean => "euclidean",
            SimilarityKind::Manhattan => "manhattan",
        })
    }
}

impl FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(SimilarityKind::Cosine),
            "euclidean" | "euclidean-similarity" => Ok(SimilarityKind::Euclidean),
            "manhattan" | "manhattan-similarity" => Ok(SimilarityKind::Manhattan),
            other => Err(Error::input(format!("unknown similarity kind {other:?}"))),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `a` to unit length. Returns `None` for the zero vector.
pub fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let n = norm(a);
    (n > 0.0).then(|| a.iter().map(|x| x / n).collect())
}

/// Pairwise similarity `Ψ(a, b)` under `kind`.
pub fn similarity(a: &[f64], b: &[f64], kind: SimilarityKind) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    match kind {
        SimilarityKind::Cosine => {
            let na = norm(a);
            let nb = norm(b);
            if na == 0.0 || nb == 0.0 {
                return Err(Error::Domain("cosine of a zero vector".into()));
            }
            Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
        }
        SimilarityKind::Euclidean => {
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            Ok(1.0 / (1.0 + d.sqrt()))
        }
        SimilarityKind::Manhattan => {
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
            Ok(1.0 / (1.0 + d))
        }
    }
}

/// Dense row-major matrix of scores: one row per key, one column per query.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::input(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::input("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        assert!(row < self.rows && col < self.cols, "index out of bounds");
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Applies `f(row, col, value)` entry-wise.
    pub fn map<F>(&self, f: F) -> ScoreMatrix
    where
        F: Fn(usize, usize, f64) -> f64,
    {
        let cols = self.cols;
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i / cols, i % cols, v))
            .collect();
        ScoreMatrix {
            rows: self.rows,
            cols,
            values,
        }
    }
}

/// `Ψ(key_i, query_j)` for every pair. Parallel over rows; each entry is computed
/// exactly as by [`similarity`].
pub fn pairwise_matrix(
    keys: &EmbeddingSet,
    queries: &EmbeddingSet,
    kind: SimilarityKind,
) -> Result<ScoreMatrix> {
    if !keys.is_empty() && !queries.is_empty() && keys.dimension() != queries.dimension() {
        return Err(Error::DimensionMismatch {
            expected: keys.dimension(),
            found: queries.dimension(),
        });
    }
    let rows = keys
        .records()
        .par_iter()
        .map(|k| {
            queries
                .iter()
                .map(|q| similarity(&k.vector, &q.vector, kind))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreMatrix::new(keys.len(), queries.len(), rows.concat())
}
