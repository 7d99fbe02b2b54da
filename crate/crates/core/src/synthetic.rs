//! Seeded synthetic labelled embeddings for tests, benchmarks and demos.
//!
//! Label `j` owns the basis direction `e_{j+1}`; `e_0` is a direction shared by
//! every document and (to a per-label degree) every label query. A document of
//! class `c` is `shared·e_0 + signal·e_{c+1} + noise`, and query `j` is
//! `query_shared[j]·e_0 + e_{j+1}`. Large `query_shared[j]` makes label `j`
//! look similar to every document, which is what the surprise score corrects.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::similarity::{EmbeddingRecord, EmbeddingSet};

#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub dimension: usize,
    /// Documents per label.
    pub per_label: usize,
    pub doc_shared: f64,
    pub doc_signal: f64,
    /// Per-dimension standard deviation of document noise.
    pub noise: f64,
    /// One entry per label.
    pub query_shared: Vec<f64>,
    pub seed: u64,
}

impl BlobSpec {
    pub fn num_labels(&self) -> usize {
        self.query_shared.len()
    }
}

/// Documents with gold labels and one query per label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub docs: EmbeddingSet,
    pub gold: HashMap<String, String>,
    pub queries: EmbeddingSet,
}

impl LabeledData {
    pub fn label_ids(&self) -> Vec<String> {
        self.queries.ids().map(str::to_string).collect()
    }
}

pub fn label_name(j: usize) -> String {
    format!("label{j}")
}

/// Generates the data set; documents are emitted label by label, ids prefixed with `prefix`.
pub fn blobs(spec: &BlobSpec, prefix: &str) -> Result<LabeledData> {
    let labels = spec.num_labels();
    if labels == 0 || spec.dimension < labels + 1 {
        return Err(Error::input(format!(
            "{labels} labels need dimension >= {}",
            labels + 1
        )));
    }
    let normal = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::input(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut docs = Vec::with_capacity(labels * spec.per_label);
    let mut gold = HashMap::new();
    for c in 0..labels {
        for i in 0..spec.per_label {
            let mut v: Vec<f64> = (0..spec.dimension).map(|_| normal.sample(&mut rng)).collect();
            v[0] += spec.doc_shared;
            v[c + 1] += spec.doc_signal;
            let id = format!("{prefix}{c}-{i}");
            gold.insert(id.clone(), label_name(c));
            docs.push(EmbeddingRecord::new(id, v));
        }
    }
    let queries = spec
        .query_shared
        .iter()
        .enumerate()
        .map(|(j, &a)| {
            let mut v = vec![0.0; spec.dimension];
            v[0] = a;
            v[j + 1] = 1.0;
            EmbeddingRecord::new(label_name(j), v).with_text(format!("this matter is {}", label_name(j)))
        })
        .collect();
    Ok(LabeledData {
        docs: EmbeddingSet::from_records(docs)?,
        gold,
        queries: EmbeddingSet::from_records(queries)?,
    })
}

/// Two labels in 16 dimensions whose queries share a large common component,
/// so the untrained cosine puts negatives far above their `ε` target.
pub fn two_blob_spec(per_label: usize, seed: u64) -> BlobSpec {
    BlobSpec {
        dimension: 16,
        per_label,
        doc_shared: 1.0,
        doc_signal: 0.65,
        noise: 0.03,
        query_shared: vec![0.3, 1.5],
        seed,
    }
}

/// Labels of very different typical similarity: cosine favours the labels with
/// a large shared component, surprise corrects for it.
pub fn contrast_spec(labels: usize, per_label: usize, seed: u64) -> BlobSpec {
    let query_shared = (0..labels)
        .map(|j| 0.3 + 2.7 * j as f64 / (labels.max(2) - 1) as f64)
        .collect();
    BlobSpec {
        dimension: labels + 4,
        per_label,
        doc_shared: 1.0,
        doc_signal: 0.3,
        noise: 0.05,
        query_shared,
        seed,
    }
}
